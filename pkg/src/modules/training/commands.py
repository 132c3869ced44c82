__all__ = ["router", "history_path"]

import argparse
from pathlib import Path

from src.cli.manifest import RunManifest
from src.cli.router import CommandRouter, arg
from src.config_schema import NetworkConfig, Settings, TrainConfig
from src.exceptions import DatasetError
from src.logging_ import logger
from src.modules.networks.mjnet import build_network
from src.modules.pipeline.repository import SPLIT_FILE, StudyRepository
from src.modules.pipeline.storage import write_checkpoint
from src.modules.training.datasets import SliceDataset
from src.modules.training.trainer import train as fit

router = CommandRouter()


def history_path(model_path: Path) -> Path:
    return Path(model_path).with_suffix(".history.csv")


def fit_network_config(cfg: NetworkConfig, dataset: SliceDataset, seed: int | None) -> NetworkConfig:
    """
    Network settings with the input extents of the data (X, Y, 3, T).
    """
    width, height, _, frames = dataset.train[0].input.shape
    document = cfg.model_dump()
    document["input_extents"] = (width, height, 3, frames)
    if seed is not None:
        document["seed"] = seed
    if tuple(cfg.input_extents) != document["input_extents"]:
        logger.info(f"Input extents set to {document['input_extents']} from the training data")
    return NetworkConfig.parse_document(document)


@router.command(
    "train",
    "Train a network on the train / validation splits of a dataset",
    arg("data_dir", type=Path, help="Dataset directory with index.json and split.json"),
    arg("out_model", type=Path, help="Checkpoint file to write"),
    arg("--epochs", type=int, help="Override the maximum number of epochs"),
)
def train(args: argparse.Namespace, settings: Settings) -> int:
    repository = StudyRepository.open(args.data_dir)
    if not repository.has_splits:
        raise DatasetError(f"Split assignment not found: {repository.root / SPLIT_FILE}")
    overrides = {}
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    train_cfg = TrainConfig.parse_document({**settings.train.model_dump(), **overrides})

    dataset = SliceDataset.from_repository(repository, train_cfg.loss)
    if not dataset.train:
        raise DatasetError(f"Training split of {repository.root} is empty")
    network = build_network(fit_network_config(settings.network, dataset, args.seed))
    manifest = RunManifest(
        command="train",
        config_paths=[str(args.config)] if args.config is not None else [],
        seed=train_cfg.seed,
        options={"train": train_cfg.model_dump(mode="json"), "network": network.config.model_dump(mode="json")},
    )

    trained = fit(network, dataset, train_cfg)
    out_model: Path = args.out_model
    out_model.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(out_model, network.config, trained.network.state_dict())
    trained.history.to_csv(history_path(out_model))
    logger.info(f"Checkpoint of epoch {trained.best_epoch} written to {out_model}")
    manifest.add_output(out_model)
    manifest.add_output(history_path(out_model))
    manifest.options["best_epoch"] = trained.best_epoch
    manifest.write(out_model)
    return 0
