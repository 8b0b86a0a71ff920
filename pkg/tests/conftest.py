import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dfl.corpus import SynthConfig, synth_generate  # noqa: E402

SMALL_ENCODER = dict(d_model=16, num_heads=4, num_layers=1, dropout_rate=0.1, max_len=64)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_generate(SynthConfig(seed=11, num_sentences=60))


@pytest.fixture(scope="session")
def eight_sentences():
    return synth_generate(SynthConfig(seed=3, num_sentences=8))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
