"""Shared fixtures: locations of the optional real-data benchmark files."""

from __future__ import annotations

import os
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]


def data_path(name: str) -> Path:
    """Benchmark CSVs live in data/ (override with THRESHCAL_DATA)."""
    override = os.environ.get("THRESHCAL_DATA")
    base = Path(override) if override else REPO_ROOT / "data"
    return base / name


IONOSPHERE_MISSING = (
    "the UCI ionosphere file is not present; place the raw ionosphere.data "
    "(351 rows, 34 features, g/b label last) at {path} — see data/README.md"
)
OZONE_MISSING = (
    "the UCI one-hour ozone file is not present; place the raw onehr.data "
    "(2536 rows, date + 72 features + 0/1 label) at {path} — see data/README.md"
)


@pytest.fixture
def ionosphere_file() -> Path:
    path = data_path("ionosphere.csv")
    if not path.exists():
        pytest.skip(IONOSPHERE_MISSING.format(path=path))
    return path


@pytest.fixture
def ozone_file() -> Path:
    path = data_path("ozone_onehr.csv")
    if not path.exists():
        pytest.skip(OZONE_MISSING.format(path=path))
    return path
