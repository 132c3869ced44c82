__all__ = ["Split", "SPLIT_FRACTIONS", "split_dataset", "split_sizes"]

import math
from collections.abc import Iterable

import numpy as np

from src._compat import StrEnum
from src.config_schema import Group
from src.logging_ import logger


class Split(StrEnum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


SPLIT_FRACTIONS: dict[Group, tuple[float, float]] = {
    Group.LVO: (16 / 77, 19 / 77),
    Group.NON_LVO: (13 / 60, 11 / 60),
    Group.WIS: (3 / 15, 3 / 15),
}
"(validation, test) fraction per group, from the clinical cohort of 77 LVO, 60 Non-LVO and 15 WIS patients"

MIN_GROUP_SIZE = 3


def split_sizes(group: Group, count: int) -> tuple[int, int, int]:
    """
    (train, validation, test) sizes of a group, rounding half up.
    """
    if count < MIN_GROUP_SIZE:
        return count, 0, 0
    validation_fraction, test_fraction = SPLIT_FRACTIONS[group]
    validation = math.floor(count * validation_fraction + 0.5)
    test = math.floor(count * test_fraction + 0.5)
    return count - validation - test, validation, test


def split_dataset(patients: Iterable[tuple[str, Group]], seed: int = 0) -> dict[str, Split]:
    """
    Stratified random assignment of patients to train / validation / test, deterministic given `seed`.
    """
    by_group: dict[Group, list[str]] = {g: [] for g in Group}
    for patient_id, group in patients:
        by_group[Group(group)].append(patient_id)

    assignment: dict[str, Split] = {}
    for group_index, (group, ids) in enumerate(by_group.items()):
        if not ids:
            continue
        if len(ids) < MIN_GROUP_SIZE:
            logger.warning(f"Group {group} has only {len(ids)} patients; all of them go to the training split")
        _, validation, test = split_sizes(group, len(ids))
        ids = sorted(ids)
        rng = np.random.default_rng([seed, group_index])
        for k, patient_id in enumerate(ids[i] for i in rng.permutation(len(ids))):
            if k < validation:
                assignment[patient_id] = Split.VALIDATION
            elif k < validation + test:
                assignment[patient_id] = Split.TEST
            else:
                assignment[patient_id] = Split.TRAIN
    return assignment
