"""
Synthetic CT perfusion studies with a known lesion.

A cylinder of brain tissue inside a skull shell and air. Every brain voxel follows the time-density curve of its
class: a gamma-variate bolus on a baseline, delayed and flattened in the penumbra and almost flat in the core.
"""

__all__ = ["gamma_variate", "tissue_curve", "make_phantom", "make_cohort"]

from collections.abc import Iterator

import numpy as np

from src.config_schema import Group, PhantomSpec, TissueCurve
from src.exceptions import PhantomSpecError
from src.logging_ import logger
from src.modules.pipeline.study import STUDY_ROLES, CtpStudy
from src.modules.tensor.tensor import Tensor
from src.modules.tensor.volume import OUTSIDE_BRAIN, MaskVolume, TissueClass, VolumeMeta


def gamma_variate(tau: np.ndarray, width: float, shape: float) -> np.ndarray:
    """
    (tau / width) ** shape * exp(shape * (1 - tau / width)) for tau > 0, else 0. Peaks at tau = width with value 1.
    """
    tau = np.asarray(tau, dtype=np.float64)
    ratio = np.maximum(tau, 0.0) / width
    return np.where(tau > 0, ratio**shape * np.exp(shape * (1.0 - ratio)), 0.0)


def tissue_curve(curve: TissueCurve, schedule: list[float], shape: float) -> np.ndarray:
    t = np.asarray(schedule, dtype=np.float64)
    return curve.baseline_hu + curve.amplitude_hu * gamma_variate(t - curve.onset_s, curve.width_s, shape)


def _ellipsoid(grid: tuple[np.ndarray, ...], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return sum(((axis - c) / r) ** 2 for axis, c, r in zip(grid, center, radii)) <= 1.0


def _lesion_center(spec: PhantomSpec, radii: np.ndarray, brain_radius: float, rng: np.random.Generator) -> np.ndarray:
    if spec.lesion.penumbra_center is not None:
        return np.asarray(spec.lesion.penumbra_center, dtype=np.float64)
    x, y, z, _ = spec.extents
    reach = max(brain_radius - max(radii[0], radii[1]), 0.0)
    angle = rng.uniform(0.0, 2 * np.pi)
    distance = reach * np.sqrt(rng.uniform())
    return np.array(
        [(x - 1) / 2 + distance * np.cos(angle), (y - 1) / 2 + distance * np.sin(angle), rng.uniform(0.0, z - 1)]
    )


def make_phantom(spec: PhantomSpec, index: int = 0) -> tuple[CtpStudy, MaskVolume]:
    """
    Study number `index` of the cohort described by `spec`: seeded with `spec.seed + index`, group taken from
    `spec.groups` cyclically. WIS studies have no lesion.
    """
    if spec.rescale_slope == 0:
        raise PhantomSpecError("rescale_slope must be non-zero")
    rng = np.random.default_rng(spec.seed + index)
    group = spec.groups[index % len(spec.groups)]
    x, y, z, _ = spec.extents
    schedule = spec.schedule()

    grid = np.meshgrid(np.arange(x), np.arange(y), np.arange(z), indexing="ij")
    radius = np.hypot(grid[0] - (x - 1) / 2, grid[1] - (y - 1) / 2)
    brain_radius = spec.brain_radius_fraction * min(x, y) / 2
    brain = radius <= brain_radius
    skull = ~brain & (radius <= brain_radius + spec.skull_thickness)

    penumbra = np.zeros_like(brain)
    core = np.zeros_like(brain)
    if group != Group.WIS:
        scale = spec.lesion.non_lvo_scale if group == Group.NON_LVO else 1.0
        penumbra_radii = np.asarray(spec.lesion.penumbra_radii) * scale
        core_radii = np.asarray(spec.lesion.core_radii) * scale
        center = _lesion_center(spec, penumbra_radii, brain_radius, rng)
        penumbra = _ellipsoid(grid, center, penumbra_radii)
        core = _ellipsoid(grid, center + np.asarray(spec.lesion.core_offset) * scale, core_radii)
        if (core & ~penumbra).any():
            raise PhantomSpecError("Core region is not contained in the penumbra region")
        penumbra &= brain
        core &= brain

    labels = np.full((x, y, z), OUTSIDE_BRAIN, dtype=np.uint8)
    labels[brain] = TissueClass.HEALTHY
    labels[penumbra] = TissueClass.PENUMBRA
    labels[core] = TissueClass.CORE

    hu = np.full((x, y, z, len(schedule)), spec.air_hu, dtype=np.float64)
    hu[skull] = spec.skull_hu
    for tissue, curve in (
        (TissueClass.HEALTHY, spec.healthy),
        (TissueClass.PENUMBRA, spec.penumbra),
        (TissueClass.CORE, spec.core),
    ):
        hu[labels == tissue] = tissue_curve(curve, schedule, spec.gamma_shape)
    if spec.noise_sigma > 0:
        hu += rng.normal(0.0, spec.noise_sigma, size=hu.shape)

    raw = (hu - spec.rescale_intercept) / spec.rescale_slope
    meta = VolumeMeta(
        pixel_spacing_mm=spec.pixel_spacing_mm,
        slice_thickness_mm=spec.slice_thickness_mm,
        time_schedule=schedule,
        rescale_slope=spec.rescale_slope,
        rescale_intercept=spec.rescale_intercept,
    )
    study = CtpStudy(Tensor(raw.astype(np.float32), STUDY_ROLES), meta, f"P{index:03d}", group)
    return study, MaskVolume(labels)


def make_cohort(spec: PhantomSpec, count: int) -> Iterator[tuple[CtpStudy, MaskVolume]]:
    for index in range(count):
        study, mask = make_phantom(spec, index)
        logger.debug(f"Generated phantom {study.patient_id} ({study.group}), seed {spec.seed + index}")
        yield study, mask
