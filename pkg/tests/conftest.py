from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import settings

from reebtop.cli import main

settings.register_profile("reebtop", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("reebtop")

ROOT = Path(__file__).resolve().parents[1]
EXAMPLES = ROOT / "docs" / "examples"

# criterion number -> (passed, one-line detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

CUBE_PS = (2, 4, 8, 16)
DEMO_SEEDS = (1, 2, 7)


def report_commands() -> dict[str, list[str]]:
    """CLI runs whose reports back criteria 1, 7 and 8 and the determinism rerun."""
    cmds = {}
    for p in CUBE_PS:
        cmds[f"c1_p{p}"] = ["entropy", "estimate", "--body", f"cube_p{p}", "--N", "10", "--T", "1000", "--seed", "0"]
    cmds["c1_sequence"] = ["entropy", "sequence", "--polytope", str(EXAMPLES / "cube.json"), "--scheme", "pnorm",
                           "--schedule", "2,4,8,16", "--N", "10", "--T", "1000", "--seed", "0"]
    for s in DEMO_SEEDS:
        cmds[f"c7_seed{s}"] = ["entropy", "estimate", "--body", str(EXAMPLES / "chaotic_demo.json"), "--N", "20",
                               "--T", "1000", "--seed", str(s)]
    cmds["c7_sequence"] = ["entropy", "sequence", "--family", "chaotic-demo", "--schedule", "1,2,3,4", "--N", "10",
                           "--T", "1000", "--seed", "7", "--resolution", "20000"]
    cmds["c8_flat"] = ["entropy", "geodesic", "--metric", str(EXAMPLES / "flat.json"), "--N", "10", "--T", "1000",
                       "--seed", "0"]
    cmds["c8_bumpy"] = ["entropy", "geodesic", "--metric", "bumpy", "--N", "10", "--T", "1000", "--seed", "0"]
    return cmds


def run_reports(root: Path) -> dict[str, Path]:
    dirs = {}
    for name, argv in report_commands().items():
        d = root / name
        code = main([*argv, "--output-dir", str(d)])
        assert code == 0, f"{name} exited with {code}"
        dirs[name] = d
    return dirs


@pytest.fixture(scope="session")
def reports(tmp_path_factory):
    return run_reports(tmp_path_factory.mktemp("reports"))


@pytest.fixture(scope="session")
def reports_rerun(tmp_path_factory, reports):
    return run_reports(tmp_path_factory.mktemp("reports_rerun"))


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")
