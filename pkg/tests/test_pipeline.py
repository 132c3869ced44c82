import json

import numpy as np
import pytest

from src.config_schema import Group, PhantomSpec, PreprocessConfig
from src.exceptions import (
    ConfigurationError,
    DatasetError,
    EmptyBrainMaskError,
    FormatError,
    PhantomSpecError,
    PreprocessingError,
    ZeroVarianceError,
)
from src.modules.pipeline.phantoms import gamma_variate, make_cohort, make_phantom
from src.modules.pipeline.preprocessing import Preprocessor, ablation_grid, brain_mask, enhance, hu_convert, zscore
from src.modules.pipeline.repository import PatientEntry, StudyRepository
from src.modules.pipeline.resample import temporal_resample, uniform_grid
from src.modules.pipeline.splits import Split, split_dataset, split_sizes
from src.modules.pipeline.storage import VOLUME_MAGIC, read_mask, read_study, read_volume, write_mask, write_study
from src.modules.pipeline.study import STUDY_ROLES, CtpStudy
from src.modules.tensor.tensor import Tensor
from src.modules.tensor.volume import MaskVolume, TissueClass, VolumeMeta, clinical_time_schedule


def _study(data: np.ndarray, schedule: list[float] | None = None, **meta) -> CtpStudy:
    schedule = schedule if schedule is not None else [float(t) for t in range(data.shape[3])]
    return CtpStudy(Tensor(data, STUDY_ROLES, dtype=np.float64), VolumeMeta(time_schedule=schedule, **meta))


def _column(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64).reshape(-1, 1, 1), "XYZ", dtype=np.float64)


def test_hu_conversion():
    raw = Tensor(np.array([0.0, 1024.0, 2048.0]).reshape(3, 1, 1, 1), STUDY_ROLES)
    hu = hu_convert(raw, VolumeMeta(time_schedule=[0.0], rescale_intercept=-1024.0))
    assert hu.data.ravel().tolist() == [-1024.0, 0.0, 1024.0]
    halved = hu_convert(raw, VolumeMeta(time_schedule=[0.0], rescale_slope=0.5))
    assert halved.data.ravel().tolist() == [0.0, 512.0, 1024.0]


def _ball(shape=(12, 12, 12), radius=4.0) -> np.ndarray:
    grid = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    center = [(n - 1) / 2 for n in shape]
    return sum((g - c) ** 2 for g, c in zip(grid, center)) <= radius**2


def test_brain_mask_keeps_the_largest_component_and_fills_holes():
    ball = _ball()
    hu = np.where(ball, 40.0, -1000.0)
    hu[6, 6, 6] = -1000.0
    hu[0, 0, 0] = 40.0
    mask = brain_mask(Tensor(hu, "XYZ", dtype=np.float64))
    np.testing.assert_array_equal(mask, ball)


def test_brain_mask_averages_over_time():
    ball = _ball((8, 8, 8), 3.0)
    hu = np.where(ball[..., None], np.array([-20.0, 60.0]), -1000.0)
    mask = brain_mask(Tensor(hu, STUDY_ROLES, dtype=np.float64))
    np.testing.assert_array_equal(mask, ball)


def test_brain_mask_of_air_is_an_error():
    with pytest.raises(EmptyBrainMaskError):
        brain_mask(Tensor(np.full((4, 4, 2), -1000.0), "XYZ"))


def test_brain_mask_of_a_phantom(small_phantom_spec):
    study, mask = make_phantom(small_phantom_spec, 0)
    np.testing.assert_array_equal(brain_mask(hu_convert(study.raw, study.meta)), mask.brain_mask)


def test_gamma_correction():
    result = enhance(_column([0.0, 0.25, 1.0]), np.ones((3, 1, 1)), equalize=False, gamma=0.5)
    assert result.volume.data.ravel().tolist() == pytest.approx([0.0, 0.5, 1.0])
    assert not result.passthrough


def test_histogram_equalization_of_a_uniform_histogram():
    values = (np.arange(256) + 0.5) / 256
    result = enhance(_column(values), np.ones((256, 1, 1)), equalize=True, gamma=None)
    np.testing.assert_allclose(result.volume.data.ravel(), np.arange(256) / 255, atol=1e-12)


def test_enhancement_zeroes_outside_the_mask():
    mask = np.array([True, True, False]).reshape(3, 1, 1)
    result = enhance(_column([2.0, 4.0, 100.0]), mask, equalize=False, gamma=None)
    assert result.volume.data.ravel().tolist() == [0.0, 1.0, 0.0]


def test_constant_intensities_pass_through():
    volume = _column([3.0, 3.0, 3.0])
    result = enhance(volume, np.ones((3, 1, 1)))
    assert result.passthrough
    assert result.volume is volume


def test_zscore():
    out = zscore(_column([1.0, 3.0, 50.0]), np.array([True, True, False]).reshape(3, 1, 1))
    assert out.data.ravel().tolist() == [-1.0, 1.0, 0.0]
    with pytest.raises(ZeroVarianceError):
        zscore(_column([2.0, 2.0]), np.ones((2, 1, 1)))
    with pytest.raises(EmptyBrainMaskError):
        zscore(_column([2.0, 2.0]), np.zeros((2, 1, 1)))


def test_uniform_grid():
    assert uniform_grid([0.0, 1.0, 3.0]).tolist() == [0.0, 1.0, 2.0, 3.0]
    assert uniform_grid([0.0, 2.5], dt=1.0).tolist() == [0.0, 1.0, 2.0, 2.5]


def test_resampling_the_clinical_schedule():
    schedule = clinical_time_schedule()
    t = np.asarray(schedule)
    data = np.broadcast_to(3.0 + 0.5 * t, (2, 2, 1, 30)).copy()
    resampled = temporal_resample(_study(data, schedule))
    assert resampled.raw.dims == (2, 2, 1, 40)
    assert resampled.meta.time_schedule == [float(i) for i in range(40)]
    # linear curves are reproduced exactly
    np.testing.assert_allclose(resampled.raw.data[0, 0, 0], 3.0 + 0.5 * np.arange(40), atol=1e-12)


def test_resampling_keeps_acquired_frames(rng):
    schedule = clinical_time_schedule()
    data = rng.standard_normal((2, 2, 1, 30))
    resampled = temporal_resample(_study(data, schedule))
    np.testing.assert_array_equal(resampled.raw.data[..., :20], data[..., :20])
    np.testing.assert_array_equal(resampled.raw.data[..., 21], data[..., 20])
    np.testing.assert_allclose(resampled.raw.data[..., 20], (data[..., 19] + data[..., 20]) / 2)


def test_uniform_schedule_is_left_unchanged(rng):
    study = _study(rng.standard_normal((2, 2, 1, 4)))
    assert temporal_resample(study) is study


def test_resampling_needs_two_instants():
    with pytest.raises(PreprocessingError):
        temporal_resample(_study(np.zeros((2, 2, 1, 1))))


def test_preprocessing_a_phantom(small_phantom_spec):
    study, mask = make_phantom(small_phantom_spec, 0)
    result = Preprocessor().run(study)
    np.testing.assert_array_equal(result.brain_mask, mask.brain_mask)
    inside = np.broadcast_to(result.brain_mask[..., None], result.study.raw.dims)
    values = result.study.raw.data[inside]
    assert values.mean() == pytest.approx(0.0, abs=1e-9)
    assert values.std() == pytest.approx(1.0)
    assert np.all(result.study.raw.data[~inside] == 0.0)
    assert result.study.meta.rescale_intercept == 0.0
    assert result.flags["zscore"]
    assert not result.flags["enhancement_passthrough"]


def test_preprocessing_can_skip_every_step(small_phantom_spec):
    study, mask = make_phantom(small_phantom_spec, 0)
    cfg = PreprocessConfig(histogram_equalization=False, gamma_correction=False, zscore=False, resample=False)
    result = Preprocessor(cfg).run(study)
    hu = hu_convert(study.raw, study.meta).data
    inside = np.broadcast_to(mask.brain_mask[..., None], hu.shape)
    np.testing.assert_allclose(result.study.raw.data[inside], hu[inside])


def test_ablation_grid():
    grid = ablation_grid()
    assert len(grid) == 16
    keys = {(c.histogram_equalization, c.gamma_correction, c.zscore, c.resample) for c in grid}
    assert len(keys) == 16


def test_every_ablation_configuration_runs(small_phantom_spec):
    spec = small_phantom_spec.model_copy(update={"time_schedule": [0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0]})
    study, mask = make_phantom(spec, 0)
    outside = np.broadcast_to(~mask.brain_mask[..., None], (16, 16, 3, 1))
    for cfg in ablation_grid():
        result = Preprocessor(cfg).run(study)
        for key in ("histogram_equalization", "gamma_correction", "zscore", "resample"):
            assert result.flags[key] == getattr(cfg, key)
        np.testing.assert_array_equal(result.brain_mask, mask.brain_mask)
        data = result.study.raw.data
        assert data.shape == (16, 16, 3, 11 if cfg.resample else 8)
        assert np.all(np.isfinite(data))
        assert np.all(data[np.broadcast_to(outside, data.shape)] == 0.0)


def test_gamma_variate_peaks_at_its_width():
    tau = np.array([-1.0, 0.0, 3.0, 6.0])
    values = gamma_variate(tau, width=3.0, shape=3.0)
    assert values[0] == 0.0
    assert values[1] == 0.0
    assert values[2] == pytest.approx(1.0)
    assert 0 < values[3] < 1


def test_phantoms_are_deterministic(small_phantom_spec):
    a_study, a_mask = make_phantom(small_phantom_spec, 4)
    b_study, b_mask = make_phantom(small_phantom_spec, 4)
    np.testing.assert_array_equal(a_study.raw.data, b_study.raw.data)
    assert a_mask == b_mask
    c_study, _ = make_phantom(small_phantom_spec, 5)
    assert not np.array_equal(a_study.raw.data, c_study.raw.data)


def test_phantom_groups_cycle(small_phantom_spec):
    groups = [study.group for study, _ in make_cohort(small_phantom_spec, 4)]
    assert groups == [Group.LVO, Group.NON_LVO, Group.WIS, Group.LVO]


def test_wis_phantoms_have_no_lesion(small_phantom_spec):
    _, mask = make_phantom(small_phantom_spec, 2)
    assert not mask.class_mask(TissueClass.PENUMBRA).any()
    assert not mask.class_mask(TissueClass.CORE).any()
    assert mask.brain_mask.any()


def test_phantom_enhancement_is_ordered_by_tissue(small_phantom_spec):
    spec = small_phantom_spec.model_copy(update={"noise_sigma": 0.0})
    study, mask = make_phantom(spec, 0)
    hu = hu_convert(study.raw, study.meta).data
    peak = {c: hu[mask.class_mask(c)].max(axis=-1).mean() for c in TissueClass}
    assert peak[TissueClass.HEALTHY] > peak[TissueClass.PENUMBRA] > peak[TissueClass.CORE]
    assert mask.class_mask(TissueClass.CORE).any()


def test_phantom_spec_validation(small_phantom_spec):
    with pytest.raises(ConfigurationError):
        PhantomSpec.parse_document({"extents": [8, 8, 3, 4], "time_schedule": [0.0, 1.0]})
    with pytest.raises(ConfigurationError):
        PhantomSpec.parse_document({"time_schedule": [0, 1, 1, 2, 3, 4, 5, 6]})
    with pytest.raises(ConfigurationError):
        PhantomSpec.parse_document({"healthy": {"baseline_hu": 35, "amplitude_hu": 5, "onset_s": 1, "width_s": 3}})
    with pytest.raises(PhantomSpecError):
        make_phantom(small_phantom_spec.model_copy(update={"rescale_slope": 0.0}))


def test_split_sizes_of_the_clinical_cohort():
    assert split_sizes(Group.LVO, 77) == (42, 16, 19)
    assert split_sizes(Group.NON_LVO, 60) == (36, 13, 11)
    assert split_sizes(Group.WIS, 15) == (9, 3, 3)
    assert split_sizes(Group.WIS, 2) == (2, 0, 0)


def test_split_dataset_is_stratified_and_deterministic():
    patients = [(f"L{i:03d}", Group.LVO) for i in range(77)]
    patients += [(f"N{i:03d}", Group.NON_LVO) for i in range(60)]
    patients += [(f"W{i:03d}", Group.WIS) for i in range(15)]
    assignment = split_dataset(patients, seed=3)
    counts = {split: sum(1 for s in assignment.values() if s == split) for split in Split}
    assert counts == {Split.TRAIN: 87, Split.VALIDATION: 32, Split.TEST: 33}
    assert split_dataset(reversed(patients), seed=3) == assignment
    assert split_dataset(patients, seed=4) != assignment


def test_study_and_mask_files(small_phantom_spec, tmp_path):
    study, mask = make_phantom(small_phantom_spec, 1)
    write_study(tmp_path / "s.ctp4", study)
    write_mask(tmp_path / "m.ctp4", mask, study.meta)
    loaded = read_study(tmp_path / "s.ctp4", "P001", Group.NON_LVO)
    np.testing.assert_array_equal(loaded.raw.data, study.raw.data)
    assert loaded.meta == study.meta
    assert read_mask(tmp_path / "m.ctp4") == mask
    with pytest.raises(FormatError):
        read_mask(tmp_path / "s.ctp4")


def test_bad_magic_is_reported_at_offset_zero(tmp_path):
    path = tmp_path / "bad.ctp4"
    path.write_bytes(b"NOTAVOL\0" + bytes(64))
    with pytest.raises(FormatError) as e:
        read_volume(path)
    assert e.value.offset == 0


def test_truncated_payload_is_reported_at_its_offset(tmp_path):
    path = tmp_path / "m.ctp4"
    write_mask(path, MaskVolume(np.zeros((4, 4, 2), dtype=np.uint8)), VolumeMeta())
    buffer = path.read_bytes()
    assert buffer.startswith(VOLUME_MAGIC)
    path.write_bytes(buffer[:-3])
    with pytest.raises(FormatError) as e:
        read_volume(path)
    # header: magic, version, dtype, 5 dims, spacing, empty schedule, rescale
    assert e.value.offset == 8 + 4 + 4 + 20 + 16 + 4 + 16
    path.write_bytes(buffer[:20])
    with pytest.raises(FormatError):
        read_volume(path)


def test_repository_round_trip(tmp_path):
    entries = [
        PatientEntry(patient_id=f"P{i:03d}", group=Group.LVO, study=f"P{i:03d}.ctp4", mask=f"P{i:03d}.mask.ctp4")
        for i in range(5)
    ]
    repository = StudyRepository(tmp_path, entries)
    with pytest.raises(DatasetError):
        repository.get_by_split(Split.TRAIN)
    repository.assign_splits(seed=1)
    repository.save()

    reopened = StudyRepository.open(tmp_path)
    assert [e.patient_id for e in reopened.get_all()] == [e.patient_id for e in entries]
    assert reopened.split_by_id == repository.split_by_id
    assert len(reopened.get_by_split("all")) == 5
    assert sum(len(reopened.get_by_split(s)) for s in Split) == 5


def test_repository_open_errors(tmp_path):
    with pytest.raises(DatasetError):
        StudyRepository.open(tmp_path / "missing")
    with pytest.raises(DatasetError):
        StudyRepository.open(tmp_path)
    (tmp_path / "index.json").write_text(json.dumps({"patients": [{"patient_id": "P000"}]}), encoding="utf-8")
    with pytest.raises(DatasetError):
        StudyRepository.open(tmp_path)
    unlabelled = PatientEntry(patient_id="P000", group=Group.WIS, study="P000.ctp4")
    with pytest.raises(DatasetError):
        StudyRepository(tmp_path, [unlabelled]).load_mask(unlabelled)
