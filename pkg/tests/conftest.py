from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from flowcomm.ledger import SECONDS_PER_DAY, AccountSegment, normalize_frame

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

T0 = 19_358 * SECONDS_PER_DAY  # 2023-01-01 00:00 UTC


def random_ledger(rng: np.random.Generator, n: int, n_accounts: int = 12, days: int = 6,
                  coarse: bool = False) -> pd.DataFrame:
    """Small random ledger; ``coarse`` snaps times to hours so ties and boundaries happen."""
    if coarse:
        ts = T0 + rng.integers(0, days * 24, n) * 3600
    else:
        ts = T0 + rng.integers(0, days * SECONDS_PER_DAY, n)
    src = rng.integers(0, n_accounts, n)
    dst = (src + rng.integers(1, n_accounts, n)) % n_accounts
    return normalize_frame(pd.DataFrame({
        "id": [f"t{i:05d}" for i in range(n)],
        "timestamp": ts,
        "source": [f"a{x:03d}" for x in src],
        "target": [f"a{x:03d}" for x in dst],
        "amount": rng.integers(1, 1000, n),
    }))


def rows_of(frame: pd.DataFrame) -> list[tuple]:
    return list(frame[["id", "timestamp", "source", "target", "amount"]].itertuples(index=False, name=None))


@st.composite
def ledgers(draw, max_n: int = 60, max_accounts: int = 8, max_days: int = 5):
    n = draw(st.integers(0, max_n))
    k = draw(st.integers(2, max_accounts))
    days = draw(st.integers(1, max_days))
    coarse = draw(st.booleans())
    seed = draw(st.integers(0, 2**32 - 1))
    return random_ledger(np.random.default_rng(seed), n, k, days, coarse)


def segments_for(accounts, segment="retail", bank="b0") -> dict[str, AccountSegment]:
    return {a: AccountSegment(a, segment, bank) for a in accounts}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_run_inputs(root, seed: int = 0, baseline_hops=(2, 3)):
    """Small labelled synthetic ledger plus a pipeline config pointing at it."""
    import yaml

    from flowcomm import synth

    root.mkdir(parents=True, exist_ok=True)
    bg = synth.BackgroundConfig(n_accounts=1500, n_days=10, transactions_per_day=250)
    inj = [synth.TypologyTemplate("simple-chain", length=3, count=2),
           synth.TypologyTemplate("smurfing", width=4),
           synth.TypologyTemplate("advanced-multipath", n_dispense=2, n_sink=2, width=3)]
    synth.generate(bg, inj, seed=seed, out_dir=root / "data", window_days=3)
    cfg = {
        "ledger": "data/ledger.csv",
        "segments": "data/segments.csv",
        "labels": "data/labels.csv",
        "window_days": 3,
        "theta": 0.2,
        "top_fraction": 0.001,
        "leiden": {"max_comm_size": 40},
        "windows": {"length_days": 5, "stride_days": 5},
        "risk": synth.BENCHMARK_RISK.to_dict(),
        "baseline_hops": list(baseline_hops),
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
