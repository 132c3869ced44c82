import numpy as np
import pytest

from src.config_schema import Group, NetworkConfig, PhantomSpec, TrainConfig
from src.exceptions import ConfigurationError, DatasetError, ShapeError, TrainingDivergedError
from src.modules.autodiff.graph import Parameter
from src.modules.metrics.images import WeightMap
from src.modules.metrics.metrics import dice_coeff
from src.modules.networks.inference import predict_volume
from src.modules.networks.mjnet import build_network
from src.modules.networks.samples import SliceSample
from src.modules.pipeline.phantoms import make_phantom
from src.modules.pipeline.preprocessing import Preprocessor
from src.modules.tensor.volume import MaskVolume, TissueClass
from src.modules.training.datasets import SliceDataset, slice_samples
from src.modules.training.optimizer import ParamStore, adam_step, lr_at_epoch
from src.modules.training.trainer import EarlyStopping, train


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 0) == pytest.approx(0.0003)
    assert lr_at_epoch(cfg, 9) == pytest.approx(0.0003)
    assert lr_at_epoch(cfg, 10) == pytest.approx(0.000285)
    assert lr_at_epoch(cfg, 25) == pytest.approx(0.00027075)
    with pytest.raises(ConfigurationError):
        lr_at_epoch(cfg, -1)


def test_early_stopping_on_constant_loss():
    stopper = EarlyStopping(patience=25)
    stopped_at = None
    for epoch in range(1, 100):
        stopper(epoch, 1.0)
        if stopper.early_stop:
            stopped_at = epoch
            break
    assert stopped_at == 26
    assert stopper.best_epoch == 1


def test_early_stopping_never_triggers_while_improving():
    stopper = EarlyStopping(patience=25)
    for epoch in range(1, 31):
        assert stopper(epoch, 1.0 / epoch)
        assert not stopper.early_stop
    assert stopper.best_epoch == 30


def test_early_stopping_ignores_tiny_improvements():
    stopper = EarlyStopping(patience=2, min_delta=0.1)
    stopper(1, 1.0)
    assert stopper(2, 0.95)
    stopper(3, 0.94)
    assert stopper.early_stop
    assert stopper.best_epoch == 3


def test_adam_first_step_moves_by_learning_rate():
    w = Parameter(np.array([1.0, -2.0]), "w", is_kernel=False)
    store = ParamStore([w])
    cfg = TrainConfig(max_norm=float("inf"))
    adam_step(store, {"w": np.array([0.5, -3.0])}, cfg, lr=0.01)
    # bias-corrected first step is lr * sign(grad)
    np.testing.assert_allclose(w.value, [0.99, -1.99], atol=1e-8)
    assert store.step == 1


def test_adam_applies_penalties_to_kernels_only():
    kernel = Parameter(np.array([1.0]), "k", is_kernel=True)
    bias = Parameter(np.array([1.0]), "b", is_kernel=False)
    cfg = TrainConfig(l1_weight=0.5, l2_weight=0.0, max_norm=float("inf"))
    adam_step(ParamStore([kernel, bias]), {"k": np.zeros(1), "b": np.zeros(1)}, cfg, lr=0.1)
    assert kernel.value[0] == pytest.approx(0.9)
    assert bias.value[0] == 1.0


def test_adam_projects_onto_the_norm_ball():
    w = Parameter(np.array([3.0, 4.0]), "w")
    cfg = TrainConfig(max_norm=2.0, l1_weight=0.0, l2_weight=0.0)
    adam_step(ParamStore([w]), {"w": np.zeros(2)}, cfg)
    assert np.linalg.norm(w.value) == pytest.approx(2.0)


def test_adam_rejects_unknown_or_misshaped_gradients():
    store = ParamStore([Parameter(np.zeros(2), "w")])
    with pytest.raises(ShapeError):
        adam_step(store, {"v": np.zeros(2)}, TrainConfig())
    with pytest.raises(ShapeError):
        adam_step(store, {"w": np.zeros(3)}, TrainConfig())


def test_slice_samples_follow_the_study(small_phantom_spec):
    study, mask = make_phantom(small_phantom_spec, 1)
    samples = slice_samples(study, mask, np.ones(3), non_lvo_penalty=2.0)
    assert len(samples) == study.depth
    assert samples[0].input.shape == (16, 16, 3, 8)
    assert samples[0].group == Group.NON_LVO
    assert all(s.multiplier == 2.0 for s in samples)
    np.testing.assert_array_equal(samples[2].target, mask.labels[:, :, 2])


def test_slice_samples_reject_mismatched_masks(small_phantom_spec):
    study, _ = make_phantom(small_phantom_spec, 0)
    other = MaskVolume(np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(ShapeError):
        slice_samples(study, other)


def _toy_dataset(rng: np.random.Generator, count: int = 4) -> SliceDataset:
    def sample(i: int) -> SliceSample:
        window = rng.standard_normal((8, 8, 3, 4))
        target = (window[:, :, 1].mean(axis=-1) > 0).astype(np.uint8)
        target[0, 0] = 255
        return SliceSample(input=window, target=target, patient_id=f"P{i:03d}", slice_index=0)

    return SliceDataset(train=[sample(i) for i in range(count)], validation=[sample(count)])


def test_training_is_deterministic(small_network_config):
    cfg = TrainConfig(max_epochs=2, batch_size=2, seed=11)
    histories = []
    for _ in range(2):
        dataset = _toy_dataset(np.random.default_rng(0))
        trained = train(build_network(small_network_config), dataset, cfg)
        histories.append([(r.epoch, r.lr, r.train_loss, r.val_loss) for r in trained.history.records])
    assert histories[0] == histories[1]
    assert len(histories[0]) == 2


def test_training_restores_the_best_epoch(small_network_config, tmp_path):
    dataset = _toy_dataset(np.random.default_rng(1))
    trained = train(build_network(small_network_config), dataset, TrainConfig(max_epochs=3, learning_rate=0.01))
    assert trained.best_val_loss == min(r.val_loss for r in trained.history.records)
    assert trained.best_epoch == trained.history.best.epoch

    path = tmp_path / "history.csv"
    trained.history.to_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_loss,stopped_flag"
    assert len(lines) == 4


def test_training_needs_a_training_split(small_network_config):
    with pytest.raises(DatasetError):
        train(build_network(small_network_config), SliceDataset(), TrainConfig())


def test_divergence_is_reported(small_network_config):
    dataset = _toy_dataset(np.random.default_rng(2), count=2)
    network = build_network(small_network_config)
    for p in network.parameters():
        p.value[...] = np.nan
    with pytest.raises(TrainingDivergedError) as e:
        train(network, dataset, TrainConfig(max_epochs=1))
    assert e.value.epoch == 1
    assert e.value.batch == 0


@pytest.mark.slow
def test_learning_on_phantoms():
    spec = PhantomSpec(extents=(32, 32, 3, 8), groups=[Group.LVO], seed=3)
    preprocessor = Preprocessor()
    cohort = []
    for index in range(40):
        study, mask = make_phantom(spec, index)
        cohort.append((preprocessor.run(study).study, mask))
    train_pairs, validation_pairs, held_out = cohort[:30], cohort[30:35], cohort[35:]
    class_weights = WeightMap.inverse_frequency(
        [mask.labels[:, :, i] for _, mask in train_pairs for i in range(mask.depth)]
    )

    def samples(pairs) -> list[SliceSample]:
        return [s for study, mask in pairs for s in slice_samples(study, mask, class_weights)]

    def held_out_dice(network) -> tuple[float, float]:
        penumbra, core = [], []
        for study, mask in held_out:
            predicted = predict_volume(network, study.raw, study.meta, brain_mask=mask.brain_mask)
            penumbra.append(dice_coeff(predicted.labels, mask.labels, c=TissueClass.PENUMBRA))
            core.append(dice_coeff(predicted.labels, mask.labels, c=TissueClass.CORE))
        return float(np.mean(penumbra)), float(np.mean(core))

    config = NetworkConfig(input_extents=(32, 32, 3, 8), channel_widths=[8, 16], time_pool_schedule=[2, 2, 2])
    untrained = held_out_dice(build_network(config))
    dataset = SliceDataset(train=samples(train_pairs), validation=samples(validation_pairs))
    trained = train(build_network(config), dataset, TrainConfig(max_epochs=100, learning_rate=3e-3, batch_size=4))
    penumbra, core = held_out_dice(trained.network)

    assert np.mean(untrained) < 0.2
    assert penumbra >= 0.70
    assert core >= 0.60
    assert penumbra > untrained[0]
    assert core > untrained[1]
