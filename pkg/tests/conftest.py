import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iossnet.pipeline import RunConfig, smallgain_stage, verify_classes  # noqa: E402


@pytest.fixture(scope="session")
def train_config(tmp_path_factory):
    return RunConfig(out=str(tmp_path_factory.mktemp("train")))


@pytest.fixture(scope="session")
def train_run(train_config):
    """Class LMIs and small-gain analysis of the default train configuration."""
    start = time.perf_counter()
    table, summary = verify_classes(train_config)
    smallgain = smallgain_stage(train_config, table)
    elapsed = time.perf_counter() - start
    return {"table": table, "summary": summary, "smallgain": smallgain, "elapsed": elapsed}


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}: {detail}")
