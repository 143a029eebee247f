import sys
from pathlib import Path

import pytest

from profilewall.engine import Engine
from profilewall.harness.scenarios import HOME_CONFIG
from profilewall.parser import load_profile

ROOT = Path(__file__).resolve().parent.parent
PROFILES = ROOT / "profiles"


def profile(name):
    return load_profile(PROFILES / name)


def engine_with(*names, config=HOME_CONFIG):
    e = Engine(config)
    for n in names:
        e.register_profile(profile(n))
    return e


def decisions(report):
    return [v.decision for v in report.verdicts]


@pytest.fixture(scope="session")
def profiles_dir():
    return PROFILES


@pytest.fixture(scope="session")
def plug_profile():
    return profile("tplink-hs110.yaml")


@pytest.fixture(scope="session")
def fig3_profile():
    return profile("fig3-minimal.yaml")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
