import argparse
import csv
import itertools
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from src.cli.app import app
from src.cli.router import positive_int
from src.modules.networks.commands import variance_path
from src.modules.pipeline.storage import read_mask, read_study, read_volume
from src.modules.training.commands import history_path

SMALL_SETTINGS = {
    "phantom": {
        "extents": [16, 16, 3, 8],
        "lesion": {"penumbra_radii": [4.0, 4.0, 1.5], "core_radii": [2.0, 2.0, 1.0]},
        "groups": ["LVO", "Non-LVO", "WIS"],
        "seed": 7,
    },
    "network": {
        "input_extents": [16, 16, 3, 8],
        "channel_widths": [2, 4],
        "time_pool_schedule": [2, 2, 2],
        "dtype": "float64",
    },
    "train": {"max_epochs": 1, "batch_size": 4},
    "evaluation": {"split": "all"},
}


@pytest.fixture
def settings_file(tmp_path) -> Path:
    path = tmp_path / "settings.yaml"
    path.write_text(yaml.safe_dump(SMALL_SETTINGS), encoding="utf-8")
    return path


def _run(settings_file: Path, *argv: str) -> int:
    command, *rest = argv
    return app.run([command, "--config", str(settings_file), *rest])


def test_synth_writes_studies_masks_and_index(settings_file, tmp_path):
    out = tmp_path / "data"
    assert _run(settings_file, "synth", str(out), "--count", "3") == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "P000.ctp4",
        "P000.mask.ctp4",
        "P001.ctp4",
        "P001.mask.ctp4",
        "P002.ctp4",
        "P002.mask.ctp4",
        "index.json",
        "manifest.json",
        "split.json",
    ]
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 7
    assert len(manifest["outputs"]) == 6
    index = json.loads((out / "index.json").read_text(encoding="utf-8"))
    assert [p["group"] for p in index["patients"]] == ["LVO", "Non-LVO", "WIS"]


def test_synth_seed_override_changes_the_studies(settings_file, tmp_path):
    assert _run(settings_file, "synth", str(tmp_path / "a"), "--count", "1") == 0
    assert _run(settings_file, "synth", str(tmp_path / "b"), "--count", "1", "--seed", "8") == 0
    a, _ = read_volume(tmp_path / "a" / "P000.ctp4")
    b, _ = read_volume(tmp_path / "b" / "P000.ctp4")
    assert not np.array_equal(a, b)


def test_synth_of_nothing_writes_only_the_manifest(settings_file, tmp_path):
    out = tmp_path / "empty"
    assert _run(settings_file, "synth", str(out), "--count", "0") == 0
    assert [p.name for p in out.iterdir()] == ["manifest.json"]


def test_preprocess_flags_are_recorded(settings_file, tmp_path):
    data, prep = tmp_path / "data", tmp_path / "prep"
    assert _run(settings_file, "synth", str(data), "--count", "2") == 0
    assert _run(settings_file, "preprocess", str(data), str(prep), "--no-he", "--no-resample") == 0
    options = json.loads((prep / "manifest.json").read_text(encoding="utf-8"))["options"]
    assert options["histogram_equalization"] is False
    assert options["gamma_correction"] is True
    assert options["resample"] is False
    assert (prep / "P001.mask.ctp4").exists()
    assert json.loads((prep / "split.json").read_text(encoding="utf-8")).keys() == {"P000", "P001"}


def test_usage_and_configuration_errors(settings_file, tmp_path):
    assert app.run(["unknown-command"]) == 2
    assert _run(settings_file, "synth", str(tmp_path / "x"), "--jobs", "0") == 2
    assert app.run(["synth", str(tmp_path / "x"), "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("network:\n  kernel_size: 2\n", encoding="utf-8")
    assert app.run(["synth", str(tmp_path / "x"), "--config", str(bad)]) == 2


def test_train_without_a_dataset(settings_file, tmp_path):
    assert _run(settings_file, "train", str(tmp_path / "missing"), str(tmp_path / "model.ctpm")) == 2
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "index.json").write_text('{"patients": []}', encoding="utf-8")
    assert _run(settings_file, "train", str(tmp_path / "data"), str(tmp_path / "model.ctpm")) == 2


def test_end_to_end(settings_file, tmp_path):
    data, prep = tmp_path / "data", tmp_path / "prep"
    model, report = tmp_path / "model.ctpm", tmp_path / "report.csv"
    assert _run(settings_file, "synth", str(data), "--count", "3") == 0
    assert _run(settings_file, "preprocess", str(data), str(prep)) == 0
    assert _run(settings_file, "train", str(prep), str(model), "--epochs", "1") == 0
    assert model.exists()
    assert len(history_path(model).read_text(encoding="utf-8").splitlines()) == 2
    assert (tmp_path / "model.ctpm.manifest.json").exists()

    assert _run(settings_file, "eval", str(model), str(prep), str(report)) == 0
    with open(report, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    patient_rows = [r for r in rows if r["patient_id"].startswith("P")]
    assert len(patient_rows) == 9
    assert all(0.0 <= float(r["DC"]) <= 1.0 for r in patient_rows)
    assert {r["group"] for r in rows if r["patient_id"] == "mean"} == {"LVO", "Non-LVO", "WIS", "All"}

    out_mask = tmp_path / "pred" / "P000.mask.ctp4"
    argv = ["predict", str(model), str(prep / "P000.ctp4"), str(out_mask), "--mc-samples", "2", "--overlay"]
    assert _run(settings_file, *argv, "--brain-mask", str(prep / "P000.mask.ctp4")) == 0
    predicted, truth = read_mask(out_mask), read_mask(prep / "P000.mask.ctp4")
    assert predicted.shape == truth.shape
    np.testing.assert_array_equal(predicted.brain_mask, truth.brain_mask)
    variance, _ = read_volume(variance_path(out_mask))
    assert variance.shape == (16, 16, 3, 1, 3)
    assert len(list(out_mask.parent.glob("P000_slice*.png"))) == 3
    assert read_study(prep / "P000.ctp4").raw.dims == (16, 16, 3, 8)


PREPROCESS_FLAGS = {
    "--no-he": "histogram_equalization",
    "--no-gamma": "gamma_correction",
    "--no-zscore": "zscore",
    "--no-resample": "resample",
}


@pytest.mark.parametrize("skipped", list(itertools.product([False, True], repeat=4)))
def test_every_preprocessing_combination_is_recorded(settings_file, tmp_path, skipped):
    data, prep = tmp_path / "data", tmp_path / "prep"
    assert _run(settings_file, "synth", str(data), "--count", "1") == 0
    flags = [flag for flag, skip in zip(PREPROCESS_FLAGS, skipped) if skip]
    assert _run(settings_file, "preprocess", str(data), str(prep), *flags) == 0
    options = json.loads((prep / "manifest.json").read_text(encoding="utf-8"))["options"]
    for key, skip in zip(PREPROCESS_FLAGS.values(), skipped):
        assert options[key] is not skip
    assert read_study(prep / "P000.ctp4").raw.dims == (16, 16, 3, 8)


@pytest.mark.parametrize("command", ["eval", "predict"])
def test_monte_carlo_samples_must_be_positive(settings_file, tmp_path, command):
    paths = [str(tmp_path / name) for name in ("model.ctpm", "data", "out.csv")]
    assert _run(settings_file, command, *paths, "--mc-samples", "0") == 2
    assert _run(settings_file, command, *paths, "--mc-samples", "-3") == 2


def test_positive_int():
    assert positive_int("3") == 3
    with pytest.raises(argparse.ArgumentTypeError):
        positive_int("0")


def _pipeline(settings_file: Path, root: Path) -> tuple[bytes, bytes]:
    data, prep, model, report = root / "data", root / "prep", root / "model.ctpm", root / "report.csv"
    assert _run(settings_file, "synth", str(data), "--count", "3") == 0
    assert _run(settings_file, "preprocess", str(data), str(prep)) == 0
    assert _run(settings_file, "train", str(prep), str(model), "--epochs", "2") == 0
    assert _run(settings_file, "eval", str(model), str(prep), str(report)) == 0
    return history_path(model).read_bytes(), report.read_bytes()


def test_pipeline_outputs_are_byte_identical_across_runs(settings_file, tmp_path):
    first_history, first_report = _pipeline(settings_file, tmp_path / "first")
    second_history, second_report = _pipeline(settings_file, tmp_path / "second")
    assert first_history == second_history
    assert first_report == second_report
    assert len(first_history.decode("utf-8").splitlines()) == 3
