from __future__ import annotations

from pathlib import Path

import pytest

from freecure.analytic import AnalyticBackend, SyntheticParser
from freecure.manifest import load_manifest
from freecure.schedule import build_schedule

REPO_ROOT = Path(__file__).resolve().parents[1]
DEMO_MANIFEST = REPO_ROOT / "manifests" / "demo.json"


@pytest.fixture(scope="session")
def backend():
    # One shared instance: the rendering and attention caches make the
    # suite a lot faster and the adapter itself is read-only.
    return AnalyticBackend()


@pytest.fixture(scope="session")
def parser():
    return SyntheticParser()


@pytest.fixture(scope="session")
def sched():
    return build_schedule("linear", 50)


@pytest.fixture()
def demo_manifest():
    return load_manifest(str(DEMO_MANIFEST))
