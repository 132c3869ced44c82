"""
Command for segmenting a single study.
"""

__all__ = ["router", "load_network", "variance_path"]

import argparse
from pathlib import Path

import numpy as np

from src.cli.manifest import RunManifest
from src.cli.router import CommandRouter, arg, positive_int
from src.config_schema import Settings
from src.logging_ import logger
from src.modules.networks.inference import predict_slices
from src.modules.networks.layers import Module
from src.modules.networks.mjnet import build_network
from src.modules.networks.overlays import write_overlays
from src.modules.pipeline.storage import read_checkpoint, read_mask, read_study, write_mask, write_volume
from src.modules.tensor.volume import MaskVolume

router = CommandRouter()


def load_network(path: Path) -> Module:
    config, state = read_checkpoint(path)
    network = build_network(config)
    network.load_state_dict(state)
    return network


def variance_path(mask_path: Path) -> Path:
    return Path(mask_path).with_suffix(".variance.ctp4")


@router.command(
    "predict",
    "Segment every slice of a study and stack the slices into a mask volume",
    arg("model", type=Path, help="Checkpoint file"),
    arg("study", type=Path, help="Pre-processed study file"),
    arg("out_mask", type=Path, help="Mask file to write"),
    arg("--mc-samples", type=positive_int, help="Monte Carlo dropout samples per slice; default from the settings"),
    arg("--overlay", action="store_true", help="Write a PNG per slice with the lesion over the time-MIP image"),
    arg("--brain-mask", type=Path, help="Mask file whose outside-brain voxels are copied to the prediction"),
)
def predict(args: argparse.Namespace, settings: Settings) -> int:
    mc_samples = args.mc_samples if args.mc_samples is not None else settings.evaluation.mc_samples
    seed = args.seed if args.seed is not None else settings.evaluation.seed
    network = load_network(args.model)
    study = read_study(args.study)
    brain = read_mask(args.brain_mask).brain_mask if args.brain_mask is not None else None

    predictions = predict_slices(network, study.raw, mc_samples, seed, args.jobs)
    mask = MaskVolume.from_class_map(np.stack([p.class_map for p in predictions], axis=2), brain)
    out_mask: Path = args.out_mask
    out_mask.parent.mkdir(parents=True, exist_ok=True)
    write_mask(out_mask, mask, study.meta)
    manifest = RunManifest(
        command="predict",
        config_paths=[str(args.config)] if args.config is not None else [],
        seed=seed,
        options={"mc_samples": mc_samples, "overlay": args.overlay, "model": str(args.model)},
    )
    manifest.add_output(out_mask)

    if mc_samples > 1:
        # (X, Y, Z, 1, classes)
        variance = np.stack([p.variance for p in predictions], axis=2)[:, :, :, None, :].astype(np.float32)
        write_volume(variance_path(out_mask), variance, study.meta.model_copy(update={"time_schedule": []}))
        manifest.add_output(variance_path(out_mask))
    if args.overlay:
        for path in write_overlays(study.raw.data, mask, out_mask.parent, out_mask.name.split(".")[0]):
            manifest.add_output(path)

    logger.info(f"Mask of {mask.depth} slices written to {out_mask}")
    manifest.write(out_mask)
    return 0
