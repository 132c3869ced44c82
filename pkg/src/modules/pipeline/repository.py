"""
Dataset directory: ``index.json`` lists the patients with their group and the study and mask file names,
``split.json`` maps every patient to train / validation / test.
"""

__all__ = ["PatientEntry", "StudyRepository", "INDEX_FILE", "SPLIT_FILE"]

import json
from pathlib import Path

from pydantic import BaseModel, ValidationError

from src.config_schema import Group
from src.exceptions import DatasetError
from src.modules.pipeline.splits import Split, split_dataset
from src.modules.pipeline.storage import read_mask, read_study
from src.modules.pipeline.study import CtpStudy
from src.modules.tensor.volume import MaskVolume

INDEX_FILE = "index.json"
SPLIT_FILE = "split.json"


class PatientEntry(BaseModel):
    patient_id: str
    group: Group
    study: str
    "Study file name, relative to the dataset directory"
    mask: str | None = None
    "Ground-truth mask file name; None for unlabelled studies"


class StudyRepository:
    root: Path
    entries: list[PatientEntry]
    entry_by_id: dict[str, PatientEntry]
    split_by_id: dict[str, Split]

    def __init__(self, root: Path, entries: list[PatientEntry], splits: dict[str, Split] | None = None):
        self.root = Path(root)
        self.entries = sorted(entries, key=lambda e: e.patient_id)
        self.entry_by_id = {entry.patient_id: entry for entry in self.entries}
        self.split_by_id = dict(splits or {})

    @classmethod
    def open(cls, root: Path) -> "StudyRepository":
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"Dataset directory not found: {root}")
        index_path = root / INDEX_FILE
        try:
            document = json.loads(index_path.read_text(encoding="utf-8"))
            entries = [PatientEntry.model_validate(e) for e in document["patients"]]
        except FileNotFoundError:
            raise DatasetError(f"Dataset index not found: {index_path}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
            raise DatasetError(f"Malformed dataset index {index_path}: {e}") from e

        splits = None
        split_path = root / SPLIT_FILE
        if split_path.exists():
            try:
                splits = {k: Split(v) for k, v in json.loads(split_path.read_text(encoding="utf-8")).items()}
            except (json.JSONDecodeError, AttributeError, ValueError) as e:
                raise DatasetError(f"Malformed split file {split_path}: {e}") from e
        return cls(root, entries, splits)

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        document = {"patients": [entry.model_dump(mode="json") for entry in self.entries]}
        (self.root / INDEX_FILE).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        if self.split_by_id:
            splits = {k: str(v) for k, v in sorted(self.split_by_id.items())}
            (self.root / SPLIT_FILE).write_text(json.dumps(splits, indent=2) + "\n", encoding="utf-8")

    def assign_splits(self, seed: int = 0) -> dict[str, Split]:
        self.split_by_id = split_dataset(((e.patient_id, e.group) for e in self.entries), seed)
        return self.split_by_id

    @property
    def has_splits(self) -> bool:
        return bool(self.split_by_id)

    def get_all(self) -> list[PatientEntry]:
        return self.entries

    def get_by_id(self, patient_id: str) -> PatientEntry | None:
        return self.entry_by_id.get(patient_id)

    def get_by_split(self, split: Split | str) -> list[PatientEntry]:
        if split == "all":
            return self.entries
        if not self.has_splits:
            raise DatasetError(f"No split assignment found: {self.root / SPLIT_FILE}")
        return [e for e in self.entries if self.split_by_id.get(e.patient_id) == Split(split)]

    def load_study(self, entry: PatientEntry) -> CtpStudy:
        return read_study(self.root / entry.study, entry.patient_id, entry.group)

    def load_mask(self, entry: PatientEntry) -> MaskVolume:
        if entry.mask is None:
            raise DatasetError(f"Patient {entry.patient_id} has no ground-truth mask")
        return read_mask(self.root / entry.mask)
