"""Locate bundled or user-supplied dataset files."""

from __future__ import annotations

import os
from pathlib import Path

from .dataset import Dataset, FeatureSchema, load_csv

ENV = "LRWBINS_DATA_DIR"
_REPO_DATA = Path(__file__).resolve().parents[2] / "data"

# file stem -> label column
KNOWN = {"adult": "income", "banknote": "label", "higgs": "label"}


def search_dirs() -> list[Path]:
    dirs = []
    if os.environ.get(ENV):
        dirs.append(Path(os.environ[ENV]))
    dirs.append(_REPO_DATA)
    return dirs


def locate(stem: str) -> tuple[Path, Path] | None:
    """``(csv, schema)`` paths for a dataset stem, or None if absent."""
    for d in search_dirs():
        csv, schema = d / f"{stem}.csv", d / f"{stem}.schema"
        if csv.is_file() and schema.is_file():
            return csv, schema
    return None


def load_named(stem: str) -> Dataset | None:
    found = locate(stem)
    if found is None:
        return None
    csv, schema = found
    return load_csv(csv, FeatureSchema.load(schema), label_column=KNOWN.get(stem, "label"))
