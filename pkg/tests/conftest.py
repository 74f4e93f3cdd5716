import numpy as np
import pytest
from hypothesis import settings

from afd import synth
from afd.trace import CsiTrace, TraceMeta

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_trace(seed=0, n=50, n_links=2, n_sub=6, rate=100.0, jitter_us=0):
    rng = np.random.default_rng(seed)
    step = int(round(1e6 / rate))
    t = np.arange(n, dtype=np.int64) * step
    if jitter_us and n:
        t = t + rng.integers(-jitter_us, jitter_us + 1, n)
        t = np.maximum.accumulate(t + np.arange(n))  # keep strictly increasing
        t -= t[0]
    csi = rng.normal(size=(n, n_links, n_sub)) + 1j * rng.normal(size=(n, n_links, n_sub))
    return CsiTrace(TraceMeta(n_links, n_sub, rate, f"rand-{seed}"), t, csi)


@pytest.fixture(scope="session")
def still_trace():
    return synth.generate_trace(synth.still_scenario())[0]


@pytest.fixture(scope="session")
def trained():
    """(config, threshold, model): default config, trained on the training split."""
    from afd import harness
    from afd.config import Config
    from afd.segmentation import calibrate_threshold

    cfg = Config()
    cal = harness.calibration_scenario_for(synth.benchmark_pack())
    th = calibrate_threshold(synth.generate_trace(cal)[0], cfg.segment_params)
    corpus = harness.corpus_from_scenarios(synth.training_pack(), cfg, th)
    falls = harness.corpus_features([c for c in corpus if c.is_fall], cfg.segment.window_ms, cfg)
    return cfg, th, harness.train_model(falls, cfg)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
