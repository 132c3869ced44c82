__all__ = ["CtpStudy"]

from dataclasses import dataclass

from src.config_schema import Group
from src.exceptions import ShapeError
from src.modules.tensor.tensor import AxisRole, Tensor
from src.modules.tensor.volume import VolumeMeta

STUDY_ROLES = (AxisRole.WIDTH, AxisRole.HEIGHT, AxisRole.DEPTH, AxisRole.TIME)


@dataclass(frozen=True)
class CtpStudy:
    """One CT perfusion acquisition (X, Y, Z, T) with its physical description."""

    raw: Tensor
    meta: VolumeMeta
    patient_id: str = ""
    group: Group = Group.LVO

    def __post_init__(self):
        if self.raw.axis_roles != STUDY_ROLES:
            raise ShapeError(f"Study tensor must be (X, Y, Z, T), got {self.raw!r}")
        if len(self.meta.time_schedule) != self.raw.extent(AxisRole.TIME):
            raise ShapeError(
                f"Study has {self.raw.extent(AxisRole.TIME)} frames but {len(self.meta.time_schedule)} instants"
            )
        object.__setattr__(self, "group", Group(self.group))

    @property
    def depth(self) -> int:
        return self.raw.extent(AxisRole.DEPTH)

    def replace(self, raw: Tensor | None = None, meta: VolumeMeta | None = None) -> "CtpStudy":
        return CtpStudy(raw if raw is not None else self.raw, meta or self.meta, self.patient_id, self.group)
