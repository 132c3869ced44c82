"""
Commands for phantom generation and pre-processing.
"""

__all__ = ["router"]

import argparse
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from src.cli.manifest import RunManifest
from src.cli.router import CommandRouter, arg
from src.config_schema import PhantomSpec, Settings
from src.exceptions import CustomError
from src.logging_ import logger
from src.modules.pipeline.phantoms import make_phantom
from src.modules.pipeline.preprocessing import Preprocessor
from src.modules.pipeline.repository import PatientEntry, StudyRepository
from src.modules.pipeline.storage import write_mask, write_study

router = CommandRouter()


def _config_paths(args: argparse.Namespace, *extra: Path | None) -> list[str]:
    return [str(p) for p in (args.config, *extra) if p is not None]


@router.command(
    "synth",
    "Generate synthetic CT perfusion studies with ground-truth masks",
    arg("out_dir", type=Path, help="Output dataset directory"),
    arg("--count", type=int, default=1, help="Number of studies"),
    arg("--spec", type=Path, help="Phantom specification document; default the `phantom` settings section"),
)
def synth(args: argparse.Namespace, settings: Settings) -> int:
    spec = PhantomSpec.from_file(args.spec) if args.spec is not None else settings.phantom
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    if args.count < 0:
        logger.error("--count must be >= 0")
        return 2
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="synth",
        config_paths=_config_paths(args, args.spec),
        seed=spec.seed,
        options={"count": args.count, "extents": list(spec.extents)},
    )

    def generate(index: int) -> PatientEntry:
        study, mask = make_phantom(spec, index)
        study_name, mask_name = f"{study.patient_id}.ctp4", f"{study.patient_id}.mask.ctp4"
        write_study(out_dir / study_name, study)
        write_mask(out_dir / mask_name, mask, study.meta)
        return PatientEntry(patient_id=study.patient_id, group=study.group, study=study_name, mask=mask_name)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        entries = list(pool.map(generate, range(args.count)))

    if entries:
        repository = StudyRepository(out_dir, entries)
        repository.assign_splits(spec.seed)
        repository.save()
        for entry in repository.get_all():
            manifest.add_output(out_dir / entry.study)
            manifest.add_output(out_dir / entry.mask)
    manifest.write(out_dir)
    logger.info(f"Wrote {len(entries)} phantom studies to {out_dir}")
    return 0


@router.command(
    "preprocess",
    "HU conversion, brain masking, enhancement, z-score and temporal resampling of every study in a dataset",
    arg("in_dir", type=Path, help="Input dataset directory"),
    arg("out_dir", type=Path, help="Output dataset directory"),
    arg("--no-he", action="store_true", help="Skip histogram equalization"),
    arg("--no-gamma", action="store_true", help="Skip gamma correction"),
    arg("--no-zscore", action="store_true", help="Skip z-score normalization"),
    arg("--no-resample", action="store_true", help="Skip temporal resampling"),
)
def preprocess(args: argparse.Namespace, settings: Settings) -> int:
    cfg = settings.preprocess
    overrides = {
        "histogram_equalization": cfg.histogram_equalization and not args.no_he,
        "gamma_correction": cfg.gamma_correction and not args.no_gamma,
        "zscore": cfg.zscore and not args.no_zscore,
        "resample": cfg.resample and not args.no_resample,
    }
    preprocessor = Preprocessor(cfg.model_copy(update=overrides))
    source = StudyRepository.open(args.in_dir)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="preprocess",
        config_paths=_config_paths(args),
        seed=args.seed,
        options=preprocessor.config.model_dump(mode="json"),
    )

    def process(entry: PatientEntry) -> PatientEntry:
        result = preprocessor.run(source.load_study(entry))
        write_study(out_dir / entry.study, result.study)
        if entry.mask is not None:
            shutil.copyfile(source.root / entry.mask, out_dir / entry.mask)
        return entry

    def guarded(entry: PatientEntry) -> PatientEntry | None:
        try:
            return process(entry)
        except (CustomError, OSError) as e:
            logger.warning(f"Patient {entry.patient_id} failed: {e}")
            manifest.failures[entry.patient_id] = str(e)
            return None

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        done = [entry for entry in pool.map(guarded, source.get_all()) if entry is not None]

    splits = {k: v for k, v in source.split_by_id.items() if k in {e.patient_id for e in done}}
    StudyRepository(out_dir, done, splits).save()
    for entry in done:
        manifest.add_output(out_dir / entry.study)
    manifest.failures = dict(sorted(manifest.failures.items()))
    manifest.write(out_dir)
    return 1 if manifest.failures else 0
