__all__ = ["MetricRow", "evaluate_patient", "aggregate", "write_report", "REPORT_COLUMNS", "ALL_GROUPS"]

import csv
import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from src.config_schema import Group
from src.modules.metrics.metrics import delta_v_ml, dice_coeff, hausdorff_mm
from src.modules.tensor.volume import MaskVolume, TissueClass, VolumeMeta

REPORT_COLUMNS = ["patient_id", "group", "class", "DC", "HD_mm", "DeltaV_ml", "error"]
ALL_GROUPS = "All"
"Aggregate over every group"


class MetricRow(BaseModel):
    patient_id: str
    group: str
    class_name: str
    dc: float = math.nan
    hd_mm: float = math.nan
    delta_v_ml: float = math.nan
    error: str = ""

    def as_csv(self) -> list[str]:
        return [
            self.patient_id,
            self.group,
            self.class_name,
            repr(self.dc),
            repr(self.hd_mm),
            repr(self.delta_v_ml),
            self.error,
        ]


def evaluate_patient(
    patient_id: str,
    group: Group,
    pred: MaskVolume,
    gt: MaskVolume,
    meta: VolumeMeta,
    hausdorff_mode: str = "slice",
) -> list[MetricRow]:
    """
    One row per tissue class. Voxels outside the ground-truth brain mask are ignored.
    """
    if pred.shape != gt.shape:
        detail = f"prediction extents {pred.shape} differ from ground truth {gt.shape}"
        return [
            MetricRow(patient_id=patient_id, group=str(group), class_name=c.name.lower(), error=detail)
            for c in TissueClass
        ]

    brain = gt.brain_mask
    rows = []
    for c in TissueClass:
        a = pred.class_mask(c) & brain
        b = gt.class_mask(c)
        hd = hausdorff_mm(a, b, meta, mode=hausdorff_mode)
        rows.append(
            MetricRow(
                patient_id=patient_id,
                group=str(group),
                class_name=c.name.lower(),
                dc=dice_coeff(a, b),
                hd_mm=hd.value_mm,
                delta_v_ml=delta_v_ml(a, b, meta),
            )
        )
    return rows


def _stats(values: Sequence[float]) -> tuple[float, float]:
    finite = np.array([v for v in values if math.isfinite(v)], dtype=np.float64)
    if not len(finite):
        return math.nan, math.nan
    return float(finite.mean()), float(finite.std())


def aggregate(rows: Sequence[MetricRow]) -> list[MetricRow]:
    """
    Mean and standard deviation per (group, class), then over all groups. Error rows are left out.
    """
    valid = [r for r in rows if not r.error]
    groups = [g.value for g in Group if any(r.group == g.value for r in valid)]
    classes = [c.name.lower() for c in TissueClass]
    out = []
    for group in [*groups, ALL_GROUPS]:
        for class_name in classes:
            selected = [r for r in valid if r.class_name == class_name and group in (ALL_GROUPS, r.group)]
            if not selected:
                continue
            dc, hd, dv = (_stats([getattr(r, field) for r in selected]) for field in ("dc", "hd_mm", "delta_v_ml"))
            for k, label in enumerate(("mean", "sd")):
                out.append(
                    MetricRow(
                        patient_id=label, group=group, class_name=class_name, dc=dc[k], hd_mm=hd[k], delta_v_ml=dv[k]
                    )
                )
    return out


def write_report(path: Path, rows: Sequence[MetricRow], with_aggregates: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())
        if with_aggregates:
            for row in aggregate(rows):
                writer.writerow(row.as_csv())
