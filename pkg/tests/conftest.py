from __future__ import annotations

import os
from pathlib import Path

import pytest

HERE = Path(__file__).parent
HOROSCOPE_DIR = HERE / "fixtures" / "horoscope"


@pytest.fixture(autouse=True, scope="session")
def _artifact_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("artifacts")
    old = os.environ.get("SKILLNLU_ARTIFACT_ROOT")
    os.environ["SKILLNLU_ARTIFACT_ROOT"] = str(root)
    yield root
    if old is None:
        os.environ.pop("SKILLNLU_ARTIFACT_ROOT", None)
    else:
        os.environ["SKILLNLU_ARTIFACT_ROOT"] = old


@pytest.fixture(scope="session")
def horoscope_dir() -> Path:
    return HOROSCOPE_DIR


@pytest.fixture(scope="session")
def horoscope_model():
    from skillnlu.interaction_model import load_interaction_model

    return load_interaction_model(HOROSCOPE_DIR)


@pytest.fixture(scope="session")
def horoscope_bundle(horoscope_model):
    from skillnlu.build import BuildConfig, build_bundle

    return build_bundle(horoscope_model, BuildConfig(seed=0))


@pytest.fixture()
def store(tmp_path):
    from skillnlu.runtime.store import ModelStore

    return ModelStore(tmp_path / "store")


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture()
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
