__all__ = ["SliceDataset", "slice_samples"]

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from src.config_schema import Group, LossConfig
from src.exceptions import ShapeError
from src.logging_ import logger
from src.modules.metrics.images import WeightMap
from src.modules.networks.samples import SliceSample, assemble_window
from src.modules.pipeline.repository import PatientEntry, StudyRepository
from src.modules.pipeline.splits import Split
from src.modules.pipeline.study import CtpStudy
from src.modules.tensor.volume import MaskVolume


def slice_samples(
    study: CtpStudy,
    mask: MaskVolume,
    class_weights: np.ndarray | None = None,
    non_lvo_penalty: float = 1.0,
) -> list[SliceSample]:
    """
    One sample per slice: the three-slice window around it and its ground-truth class map.
    """
    data = study.raw.data
    if mask.shape != data.shape[:3]:
        raise ShapeError(f"Mask {mask.shape} does not match study {data.shape[:3]} of {study.patient_id}")
    multiplier = non_lvo_penalty if study.group == Group.NON_LVO else 1.0
    weight_map = None
    if class_weights is not None:
        weight_map = WeightMap.from_class_weights(data.shape[:2], class_weights).weights
    return [
        SliceSample(
            input=assemble_window(data, i),
            target=mask.labels[:, :, i],
            weight_map=weight_map,
            multiplier=multiplier,
            patient_id=study.patient_id,
            slice_index=i,
            group=study.group,
        )
        for i in range(study.depth)
    ]


@dataclass
class SliceDataset:
    train: list[SliceSample] = field(default_factory=list)
    validation: list[SliceSample] = field(default_factory=list)
    test: list[SliceSample] = field(default_factory=list)

    @property
    def class_weights(self) -> np.ndarray:
        return WeightMap.inverse_frequency([s.target for s in self.train])

    @classmethod
    def from_repository(cls, repository: StudyRepository, loss: LossConfig | None = None) -> "SliceDataset":
        """
        Slices of every labelled patient, grouped by split. Weight maps carry the inverse class frequencies of the
        training split; Non-LVO samples are scaled by the Non-LVO penalty.
        """
        loss = loss or LossConfig()
        loaded: dict[Split, list[tuple[CtpStudy, MaskVolume]]] = {}
        for split in Split:
            loaded[split] = [_load(repository, entry) for entry in repository.get_by_split(split)]

        train_maps = [mask.labels[:, :, i] for _, mask in loaded[Split.TRAIN] for i in range(mask.depth)]
        class_weights = WeightMap.inverse_frequency(train_maps)
        logger.info(f"Class weights (healthy, penumbra, core): {np.round(class_weights, 4).tolist()}")

        def samples(pairs: Sequence[tuple[CtpStudy, MaskVolume]]) -> list[SliceSample]:
            return [s for study, mask in pairs for s in slice_samples(study, mask, class_weights, loss.non_lvo_penalty)]

        dataset = cls(samples(loaded[Split.TRAIN]), samples(loaded[Split.VALIDATION]), samples(loaded[Split.TEST]))
        logger.info(
            f"Slices: train={len(dataset.train)} validation={len(dataset.validation)} test={len(dataset.test)}"
        )
        return dataset


def _load(repository: StudyRepository, entry: PatientEntry) -> tuple[CtpStudy, MaskVolume]:
    return repository.load_study(entry), repository.load_mask(entry)
