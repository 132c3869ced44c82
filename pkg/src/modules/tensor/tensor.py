"""
Dense tensors with one semantic role per axis.

Axes always appear in the order width, height, depth, time, channel (any subset), row-major with the last axis
fastest. Buffers are read-only once wrapped; operations return new tensors.
"""

__all__ = ["AxisRole", "Tensor", "index", "pad", "concat", "split"]

from collections.abc import Iterable, Mapping, Sequence
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, DTypeLike

from src._compat import StrEnum
from src.exceptions import BoundsError, ConfigurationError, ShapeError


class AxisRole(StrEnum):
    WIDTH = "width"
    HEIGHT = "height"
    DEPTH = "depth"
    TIME = "time"
    CHANNEL = "channel"


CANONICAL_ORDER: tuple[AxisRole, ...] = tuple(AxisRole)
ROLE_LETTERS: dict[str, AxisRole] = {
    "X": AxisRole.WIDTH,
    "Y": AxisRole.HEIGHT,
    "Z": AxisRole.DEPTH,
    "T": AxisRole.TIME,
    "C": AxisRole.CHANNEL,
}
ROLE_NAMES: dict[AxisRole, str] = {role: letter for letter, role in ROLE_LETTERS.items()}

RolesLike = str | Sequence[AxisRole | str]


def parse_roles(roles: RolesLike) -> tuple[AxisRole, ...]:
    """
    Accepts either letters ("XYZT") or role names / AxisRole members.
    """
    if isinstance(roles, str):
        try:
            return tuple(ROLE_LETTERS[letter] for letter in roles.upper())
        except KeyError as e:
            raise ConfigurationError(f"Unknown axis letter {e.args[0]!r} in {roles!r}") from None
    return tuple(AxisRole(role) for role in roles)


class Tensor:
    data: np.ndarray
    axis_roles: tuple[AxisRole, ...]

    __slots__ = ("data", "axis_roles")

    def __init__(self, data: ArrayLike, axis_roles: RolesLike, dtype: DTypeLike | None = None):
        if dtype is None and not isinstance(data, np.ndarray):
            dtype = np.float32
        array = np.array(data, dtype=dtype, order="C", copy=True)
        roles = parse_roles(axis_roles)

        if array.ndim != len(roles):
            raise ShapeError(f"{array.ndim}-dimensional data given {len(roles)} axis roles {roles}")
        if len(set(roles)) != len(roles):
            raise ConfigurationError(f"Axis roles must be unique, got {roles}")
        order = [CANONICAL_ORDER.index(role) for role in roles]
        if order != sorted(order):
            raise ConfigurationError(f"Axis roles must follow the order X, Y, Z, T, C, got {roles}")
        if any(extent < 1 for extent in array.shape):
            raise ShapeError(f"All extents must be >= 1, got {array.shape}")

        array.setflags(write=False)
        self.data = array
        self.axis_roles = roles

    def __repr__(self) -> str:
        letters = "".join(ROLE_NAMES[role] for role in self.axis_roles)
        return f"Tensor({letters}, dims={self.dims}, dtype={self.dtype})"

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def has(self, role: AxisRole | str) -> bool:
        return AxisRole(role) in self.axis_roles

    def axis(self, role: AxisRole | str | int) -> int:
        if isinstance(role, int):
            if not -self.rank <= role < self.rank:
                raise ConfigurationError(f"Axis {role} does not exist in a rank-{self.rank} tensor")
            return role % self.rank
        role = AxisRole(role)
        if role not in self.axis_roles:
            raise ConfigurationError(f"Tensor with roles {self.axis_roles} has no {role} axis")
        return self.axis_roles.index(role)

    def extent(self, role: AxisRole | str) -> int:
        return self.dims[self.axis(role)]

    def astype(self, dtype: DTypeLike) -> "Tensor":
        return Tensor(self.data.astype(dtype), self.axis_roles)

    def to_numpy(self) -> np.ndarray:
        return self.data.copy()

    def with_data(self, data: np.ndarray) -> "Tensor":
        return Tensor(data, self.axis_roles)

    def with_roles(self, axis_roles: RolesLike) -> "Tensor":
        """Same buffer under new roles, e.g. a single-slice (X, Y, T) volume seen as (X, Y, C)."""
        return Tensor(self.data, axis_roles)


def index(t: Tensor, coords: Sequence[int]) -> float | int:
    if len(coords) != t.rank:
        raise ShapeError(f"Expected {t.rank} coordinates, got {len(coords)}")
    for axis, (c, extent) in enumerate(zip(coords, t.dims)):
        if not 0 <= c < extent:
            raise BoundsError(axis, c, extent)
    return t.data[tuple(coords)].item()


def pad(
    t: Tensor,
    amounts: Sequence[int] | Mapping[AxisRole | str, int],
    mode: Literal["zero", "replicate"] = "zero",
) -> Tensor:
    if isinstance(amounts, Mapping):
        per_axis = [0] * t.rank
        for role, amount in amounts.items():
            per_axis[t.axis(role)] = amount
    else:
        per_axis = list(amounts)
    if len(per_axis) != t.rank:
        raise ShapeError(f"Expected {t.rank} pad amounts, got {len(per_axis)}")
    if any(a < 0 for a in per_axis):
        raise ConfigurationError(f"Pad amounts must be >= 0, got {per_axis}")
    if not any(per_axis):
        return t

    widths = [(a, a) for a in per_axis]
    match mode:
        case "zero":
            padded = np.pad(t.data, widths, mode="constant")
        case "replicate":
            padded = np.pad(t.data, widths, mode="edge")
        case _:
            raise ConfigurationError(f"Unknown pad mode {mode!r}")
    return Tensor(padded, t.axis_roles)


def concat(tensors: Iterable[Tensor], axis: AxisRole | str | int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("Nothing to concatenate")
    first = tensors[0]
    ax = first.axis(axis)
    for other in tensors[1:]:
        if other.axis_roles != first.axis_roles:
            raise ShapeError(f"Axis roles differ: {first.axis_roles} vs {other.axis_roles}")
        for k, (a, b) in enumerate(zip(first.dims, other.dims)):
            if k != ax and a != b:
                raise ShapeError(f"Extents differ on axis {k} ({first.axis_roles[k]}): {a} vs {b}")
    if len(tensors) == 1:
        return first
    return Tensor(np.concatenate([t.data for t in tensors], axis=ax), first.axis_roles)


def split(t: Tensor, axis: AxisRole | str | int, sizes: Sequence[int]) -> list[Tensor]:
    ax = t.axis(axis)
    if sum(sizes) != t.dims[ax] or any(s < 1 for s in sizes):
        raise ShapeError(f"Sizes {list(sizes)} do not partition extent {t.dims[ax]} of axis {ax}")
    boundaries = np.cumsum(sizes)[:-1]
    return [Tensor(part, t.axis_roles) for part in np.split(t.data, boundaries, axis=ax)]
