import logging
from pathlib import Path

import pytest

from bundle_factory import evaluation_set, make_bundle
from storage import save_bundle

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def iterative_bundle():
    return make_bundle("task-a", n_failed=3)


@pytest.fixture
def corpus():
    """Five iterative bundles, one interaction-free and one unsolved, with two student models."""
    bundles = []
    for variant in range(5):
        task = f"iter-{variant}"
        evaluations = (evaluation_set(task, "m1", 0.0, 1.0 if variant % 2 else 0.0, human=1.0)
                       + evaluation_set(task, "m2", 0.0, 1.0 if variant < 3 else 0.5))
        bundles.append(make_bundle(task, n_failed=2 + variant % 3, variant=variant, evaluations=evaluations))
    bundles.append(make_bundle("free-0", n_failed=0, variant=7,
                               evaluations=evaluation_set("free-0", "m1", 0.0, 1.0)
                               + evaluation_set("free-0", "m2", 0.0, 0.0)))
    bundles.append(make_bundle("unsolved-0", n_failed=3, solved=False, variant=8))
    return bundles


@pytest.fixture
def corpus_dir(tmp_path, corpus) -> Path:
    root = tmp_path / "corpus"
    for bundle in corpus:
        save_bundle(bundle, root / bundle.task_id)
    return root
