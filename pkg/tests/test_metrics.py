import csv
import math

import numpy as np
import pytest

from src.config_schema import Group
from src.exceptions import ShapeError
from src.modules.metrics.metrics import delta_v_ml, dice_coeff, hausdorff_brute_force, hausdorff_mm
from src.modules.metrics.report import ALL_GROUPS, REPORT_COLUMNS, MetricRow, aggregate, evaluate_patient, write_report
from src.modules.tensor.volume import OUTSIDE_BRAIN, MaskVolume, VolumeMeta


def _points(shape, *coords) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for c in coords:
        mask[c] = True
    return mask


def test_dice_coefficient():
    a = _points((3, 3), (0, 0), (0, 1))
    b = _points((3, 3), (0, 1), (2, 2))
    assert dice_coeff(a, a) == 1.0
    assert dice_coeff(a, _points((3, 3), (2, 2))) == 0.0
    assert dice_coeff(a, b) == 0.5
    assert dice_coeff(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_dice_on_label_maps():
    pred = np.array([[1, 1], [0, 2]])
    gt = np.array([[1, 0], [0, 2]])
    assert dice_coeff(pred, gt, c=1) == pytest.approx(2 / 3)
    assert dice_coeff(pred, gt, c=2) == 1.0


def test_dice_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        dice_coeff(np.zeros((2, 2)), np.zeros((2, 3)))


def test_hausdorff_three_four_five():
    a = _points((5, 5), (0, 0))
    b = _points((5, 5), (3, 4))
    assert hausdorff_mm(a, b).value_mm == pytest.approx(5.0)
    meta = VolumeMeta(pixel_spacing_mm=0.4258)
    assert hausdorff_mm(a, b, meta).value_mm == pytest.approx(2.129)


def test_hausdorff_identical_masks():
    a = _points((6, 6), (1, 1), (4, 2), (3, 5))
    assert hausdorff_mm(a, a).value_mm == 0.0


def _random_pair(rng, shape) -> tuple[np.ndarray, np.ndarray]:
    size = int(np.prod(shape))
    masks = []
    for _ in range(2):
        mask = np.zeros(size, dtype=bool)
        mask[rng.choice(size, size=int(rng.integers(1, min(500, size) + 1)), replace=False)] = True
        masks.append(mask.reshape(shape))
    return masks[0], masks[1]


def _reference_dice(a: np.ndarray, b: np.ndarray) -> float:
    points_a, points_b = set(map(tuple, np.argwhere(a))), set(map(tuple, np.argwhere(b)))
    return 2 * len(points_a & points_b) / (len(points_a) + len(points_b))


@pytest.mark.parametrize("trial", range(100))
def test_slice_metrics_match_brute_force(trial):
    rng = np.random.default_rng(trial)
    shape = (int(rng.integers(2, 31)), int(rng.integers(2, 31)))
    a, b = _random_pair(rng, shape)
    meta = VolumeMeta(pixel_spacing_mm=0.4258, slice_thickness_mm=5.0)
    assert abs(dice_coeff(a, b) - _reference_dice(a, b)) <= 1e-9
    expected_hd = hausdorff_brute_force(a, b, (0.4258, 0.4258))
    assert abs(hausdorff_mm(a, b, meta).value_mm - expected_hd) <= 1e-9
    expected_dv = abs(len(np.argwhere(a)) - len(np.argwhere(b))) * 0.4258 * 0.4258 * 5.0 / 1000
    assert abs(delta_v_ml(a, b, meta) - expected_dv) <= 1e-9


@pytest.mark.parametrize("trial", range(100))
def test_volume_metrics_match_brute_force(trial):
    rng = np.random.default_rng(500 + trial)
    shape = (int(rng.integers(2, 13)), int(rng.integers(2, 13)), int(rng.integers(1, 5)))
    a, b = _random_pair(rng, shape)
    meta = VolumeMeta(pixel_spacing_mm=0.4258, slice_thickness_mm=5.0)
    assert abs(dice_coeff(a, b) - _reference_dice(a, b)) <= 1e-9
    expected_hd = hausdorff_brute_force(a, b, (0.4258, 0.4258, 5.0))
    assert abs(hausdorff_mm(a, b, meta, mode="volume").value_mm - expected_hd) <= 1e-9


def test_fixed_points_hold_exactly(rng):
    a, _ = _random_pair(rng, (8, 8, 2))
    meta = VolumeMeta()
    assert dice_coeff(a, a) == 1.0
    assert hausdorff_mm(a, a, meta, mode="volume").value_mm == 0.0
    assert delta_v_ml(a, a, meta) == 0.0
    assert dice_coeff(a, ~a) == 0.0


def test_hausdorff_volume_mode_uses_slice_thickness():
    a = _points((4, 4, 3), (0, 0, 0))
    b = _points((4, 4, 3), (0, 0, 2))
    meta = VolumeMeta(pixel_spacing_mm=0.5, slice_thickness_mm=5.0)
    assert hausdorff_mm(a, b, meta, mode="volume").value_mm == pytest.approx(10.0)
    assert hausdorff_brute_force(a, b, meta.spacing_mm) == pytest.approx(10.0)


def test_hausdorff_empty_conventions():
    empty = np.zeros((4, 4, 2), dtype=bool)
    result = hausdorff_mm(empty, empty)
    assert result.empty
    assert result.value_mm == 0.0

    a = _points((4, 4, 2), (1, 1, 0), (2, 2, 1))
    b = _points((4, 4, 2), (1, 2, 0))
    result = hausdorff_mm(a, b)
    assert result.skipped_slices == (1,)
    assert result.value_mm == pytest.approx(1.0)

    one_sided = hausdorff_mm(a, empty)
    assert math.isnan(one_sided.value_mm)
    assert not one_sided.empty


def test_delta_v():
    meta = VolumeMeta(pixel_spacing_mm=0.4258, slice_thickness_mm=5.0)
    a = np.zeros((10, 10, 2), dtype=bool)
    b = np.zeros((10, 10, 2), dtype=bool)
    a.flat[:100] = True
    b.flat[:60] = True
    assert meta.voxel_volume_mm3 == pytest.approx(0.9065282)
    assert delta_v_ml(a, b, meta) == pytest.approx(0.03626, abs=1e-5)
    assert delta_v_ml(a, a, meta) == 0.0
    assert delta_v_ml(np.zeros_like(a), np.zeros_like(a), meta) == 0.0


def _mask(rng) -> MaskVolume:
    labels = rng.integers(0, 3, size=(6, 6, 2)).astype(np.uint8)
    labels[0, :, :] = OUTSIDE_BRAIN
    return MaskVolume(labels)


def test_ground_truth_as_prediction_scores_perfectly(rng):
    gt = _mask(rng)
    rows = evaluate_patient("P000", Group.LVO, gt, gt, VolumeMeta())
    assert [r.class_name for r in rows] == ["healthy", "penumbra", "core"]
    for row in rows:
        assert row.dc == 1.0
        assert row.hd_mm == 0.0
        assert row.delta_v_ml == 0.0
        assert row.error == ""


def test_empty_lesions_score_zero_volume_difference():
    labels = np.zeros((4, 4, 2), dtype=np.uint8)
    gt = MaskVolume(labels)
    rows = evaluate_patient("P002", Group.WIS, gt, gt, VolumeMeta())
    core = next(r for r in rows if r.class_name == "core")
    assert core.delta_v_ml == 0.0
    assert core.dc == 1.0
    assert core.hd_mm == 0.0


def test_prediction_outside_the_brain_is_ignored(rng):
    gt = _mask(rng)
    labels = gt.labels.copy()
    labels[0, :, :] = 2
    rows = evaluate_patient("P000", Group.LVO, MaskVolume(labels), gt, VolumeMeta())
    assert all(r.dc == 1.0 for r in rows)


def test_shape_mismatch_becomes_error_rows(rng):
    gt = _mask(rng)
    pred = MaskVolume(np.zeros((6, 6, 1), dtype=np.uint8))
    rows = evaluate_patient("P000", Group.LVO, pred, gt, VolumeMeta())
    assert len(rows) == 3
    assert all(r.error and math.isnan(r.dc) for r in rows)


def test_aggregates_match_recomputation():
    rows = [
        MetricRow(patient_id="P000", group="LVO", class_name="core", dc=0.5, hd_mm=2.0, delta_v_ml=0.1),
        MetricRow(patient_id="P001", group="LVO", class_name="core", dc=0.7, hd_mm=math.nan, delta_v_ml=0.3),
        MetricRow(patient_id="P002", group="WIS", class_name="core", dc=1.0, hd_mm=0.0, delta_v_ml=0.0),
        MetricRow(patient_id="P003", group="WIS", class_name="core", error="failed"),
    ]
    by_key = {(r.group, r.patient_id): r for r in aggregate(rows)}
    lvo_mean = by_key[("LVO", "mean")]
    assert lvo_mean.dc == pytest.approx(0.6)
    assert lvo_mean.hd_mm == pytest.approx(2.0)
    assert by_key[("LVO", "sd")].dc == pytest.approx(np.std([0.5, 0.7]))
    assert by_key[("WIS", "mean")].dc == 1.0
    overall = by_key[(ALL_GROUPS, "mean")]
    assert overall.dc == pytest.approx(np.mean([0.5, 0.7, 1.0]))
    assert overall.delta_v_ml == pytest.approx(np.mean([0.1, 0.3, 0.0]))


def test_write_report(tmp_path, rng):
    gt = _mask(rng)
    rows = evaluate_patient("P000", Group.NON_LVO, gt, gt, VolumeMeta())
    path = tmp_path / "report.csv"
    write_report(path, rows)
    with open(path, newline="", encoding="utf-8") as f:
        table = list(csv.reader(f))
    assert table[0] == REPORT_COLUMNS
    assert table[1][:4] == ["P000", "Non-LVO", "healthy", "1.0"]
    # 3 patient rows, mean and sd for Non-LVO and All over 3 classes
    assert len(table) == 1 + 3 + 2 * 2 * 3
