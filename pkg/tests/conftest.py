import numpy as np
import pytest
from hypothesis import settings

from vocalguard.synth import SynthSpec, synth_raw, synth_voice

settings.register_profile("ci", deadline=None, max_examples=40)
settings.load_profile("ci")

# criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def voice(f0=120.0, seed=0, **kw):
    """Normalized synthetic voice plus its ground truth."""
    spec = SynthSpec(f0_hz=f0, **kw)
    return synth_voice(spec, np.random.default_rng(seed)), spec


def components(f0=120.0, seed=0, **kw):
    spec = SynthSpec(f0_hz=f0, **kw)
    return synth_raw(spec, np.random.default_rng(seed))


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One full desk-scale run shared by the acceptance and report tests."""
    from vocalguard.config import RunConfig
    from vocalguard.pipeline import run_pipeline

    out = tmp_path_factory.mktemp("run_a")
    return run_pipeline(RunConfig(), out)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
