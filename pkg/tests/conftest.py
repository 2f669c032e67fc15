import os
from pathlib import Path

import numpy as np
import pytest

from idsframe import audit, synthetic

DATA_ROOT = os.environ.get("IDSFRAME_DATA")


@pytest.fixture(autouse=True)
def _clean_audit():
    audit.reset()
    yield
    audit.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def nsl_like_dir(tmp_path_factory):
    """Small NSL-KDD-layout corpus shared by the pipeline tests."""
    d = tmp_path_factory.mktemp("nsl_like")
    synthetic.write_nslkdd_like(d / "train.txt", 700, 160, seed=3)
    synthetic.write_nslkdd_like(d / "test.txt", 200, 120, seed=4)
    return d


@pytest.fixture(scope="session")
def ton_like_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ton_like")
    counts = {k: max(12, v // 25) for k, v in synthetic.TON_TYPES.items()}
    synthetic.write_toniot_like(d / "windows10.csv", 400, counts, seed=5, n_features=24)
    return d


def real_file(*parts: str) -> Path | None:
    if not DATA_ROOT:
        return None
    p = Path(DATA_ROOT, *parts)
    return p if p.exists() else None


# verdict lines collected by test_acceptance.py, printed after the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
