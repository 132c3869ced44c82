"""
Command for scoring a checkpoint against ground-truth masks.
"""

__all__ = ["router"]

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from src.cli.manifest import RunManifest
from src.cli.router import CommandRouter, arg, positive_int
from src.config_schema import Settings
from src.exceptions import CustomError
from src.logging_ import logger
from src.modules.metrics.report import MetricRow, evaluate_patient, write_report
from src.modules.networks.commands import load_network
from src.modules.networks.inference import predict_volume
from src.modules.pipeline.repository import PatientEntry, StudyRepository
from src.modules.tensor.volume import TissueClass

router = CommandRouter()


def _error_rows(entry: PatientEntry, detail: str) -> list[MetricRow]:
    return [
        MetricRow(patient_id=entry.patient_id, group=str(entry.group), class_name=c.name.lower(), error=detail)
        for c in TissueClass
    ]


@router.command(
    "eval",
    "Per-patient, per-class Dice, Hausdorff distance and volume difference with group aggregates",
    arg("model", type=Path, help="Checkpoint file"),
    arg("data_dir", type=Path, help="Dataset directory with ground-truth masks"),
    arg("report", type=Path, help="CSV report to write"),
    arg("--split", choices=["train", "validation", "test", "all"], help="Split to evaluate; default from settings"),
    arg("--mc-samples", type=positive_int, help="Monte Carlo dropout samples per slice; default from settings"),
)
def evaluate(args: argparse.Namespace, settings: Settings) -> int:
    cfg = settings.evaluation
    split = args.split or cfg.split
    mc_samples = args.mc_samples if args.mc_samples is not None else cfg.mc_samples
    seed = args.seed if args.seed is not None else cfg.seed
    network = load_network(args.model)
    repository = StudyRepository.open(args.data_dir)
    entries = repository.get_by_split(split)

    def score(entry: PatientEntry) -> list[MetricRow]:
        study, gt = repository.load_study(entry), repository.load_mask(entry)
        try:
            pred = predict_volume(network, study.raw, study.meta, mc_samples, seed, brain_mask=gt.brain_mask)
        except CustomError as e:
            logger.warning(f"Patient {entry.patient_id} could not be evaluated: {e}")
            return _error_rows(entry, str(e))
        return evaluate_patient(entry.patient_id, entry.group, pred, gt, study.meta, cfg.hausdorff_mode)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = [row for patient_rows in pool.map(score, entries) for row in patient_rows]

    report: Path = args.report
    report.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, rows)
    failed = sorted({row.patient_id for row in rows if row.error})
    manifest = RunManifest(
        command="eval",
        config_paths=[str(args.config)] if args.config is not None else [],
        seed=seed,
        options={"split": split, "mc_samples": mc_samples, "model": str(args.model), "patients": len(entries)},
        failures={patient_id: "evaluation failed" for patient_id in failed},
    )
    manifest.add_output(report)
    manifest.write(report)
    logger.info(f"Report of {len(entries)} patients written to {report}")
    return 1 if failed else 0
