import numpy as np
import pytest

from src.exceptions import BoundsError, ConfigurationError, ShapeError
from src.modules.tensor.tensor import AxisRole, Tensor, concat, index, pad, split
from src.modules.tensor.volume import OUTSIDE_BRAIN, MaskVolume, TissueClass, VolumeMeta, clinical_time_schedule


def test_index_row_major():
    t = Tensor([[1, 2], [3, 4]], "XY")
    assert index(t, (1, 0)) == 3
    assert index(t, (0, 0)) == 1
    assert index(t, (1, 1)) == 4


def test_index_last_element():
    data = np.arange(2 * 3 * 4 * 5, dtype=np.float32).reshape(2, 3, 4, 5)
    t = Tensor(data, "XYZT")
    assert index(t, (1, 2, 3, 4)) == data.size - 1


def test_index_out_of_range_names_axis():
    t = Tensor(np.zeros((2, 3)), "XY")
    with pytest.raises(BoundsError) as e:
        index(t, (0, 3))
    assert e.value.axis == 1
    assert e.value.extent == 3


def test_default_dtype_is_float32():
    assert Tensor([[1.0]], "XY").dtype == np.float32
    assert Tensor(np.zeros((1, 1)), "XY").dtype == np.float64


def test_roles_must_be_unique_and_ordered():
    with pytest.raises(ConfigurationError):
        Tensor(np.zeros((2, 2)), "XX")
    with pytest.raises(ConfigurationError):
        Tensor(np.zeros((2, 2)), "YX")
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2)), "XYZ")


def test_buffer_is_read_only():
    t = Tensor(np.zeros((2, 2)), "XY")
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_pad_zero_and_replicate():
    t = Tensor([[1, 2], [3, 4]], "XY")
    zero = pad(t, (1, 0))
    assert zero.dims == (4, 2)
    assert zero.data[0].tolist() == [0, 0]
    replicate = pad(t, {"height": 1}, mode="replicate")
    assert replicate.data[0].tolist() == [1, 1, 2, 2]


def test_pad_rejects_negative_amounts():
    with pytest.raises(ConfigurationError):
        pad(Tensor(np.zeros((2, 2)), "XY"), (-1, 0))


def test_concat_and_split_along_time():
    a = Tensor(np.ones((2, 2, 3)), "XYT")
    b = Tensor(np.zeros((2, 2, 2)), "XYT")
    joined = concat([a, b], AxisRole.TIME)
    assert joined.dims == (2, 2, 5)
    parts = split(joined, "time", [3, 2])
    assert np.array_equal(parts[0].data, a.data)
    assert np.array_equal(parts[1].data, b.data)


def test_concat_rejects_mismatched_extents():
    a = Tensor(np.ones((2, 2, 3)), "XYT")
    b = Tensor(np.ones((3, 2, 3)), "XYT")
    with pytest.raises(ShapeError):
        concat([a, b], "time")


def test_split_must_partition():
    with pytest.raises(ShapeError):
        split(Tensor(np.ones((4, 2)), "XY"), "width", [1, 2])


def test_volume_meta_schedule_strictly_increasing():
    with pytest.raises(ValueError):
        VolumeMeta(time_schedule=[0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        VolumeMeta(pixel_spacing_mm=0.0)


def test_voxel_volume():
    meta = VolumeMeta()
    assert meta.voxel_volume_mm3 == pytest.approx(0.4258**2 * 5.0)


def test_clinical_schedule():
    schedule = clinical_time_schedule()
    assert len(schedule) == 30
    assert schedule[:3] == [0.0, 1.0, 2.0]
    assert schedule[19:22] == [19.0, 21.0, 23.0]
    assert schedule[-1] == 39.0


def test_mask_volume_labels():
    labels = np.array([[0, 1], [2, OUTSIDE_BRAIN]], dtype=np.uint8)
    mask = MaskVolume(labels)
    assert mask.shape == (2, 2, 1)
    assert mask.brain_mask.sum() == 3
    assert mask.class_mask(TissueClass.CORE).sum() == 1
    with pytest.raises(ShapeError):
        MaskVolume(np.array([[3]]))


def test_mask_from_class_map_marks_outside_brain():
    class_map = np.ones((2, 2, 1), dtype=np.uint8)
    brain = np.array([[True, False], [True, True]])[:, :, None]
    mask = MaskVolume.from_class_map(class_map, brain)
    assert mask.labels[0, 1, 0] == OUTSIDE_BRAIN
    assert mask.labels[0, 0, 0] == TissueClass.PENUMBRA
