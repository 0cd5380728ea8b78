from __future__ import annotations

import io
import json
import subprocess
import sys

import pandas as pd
import pytest
import yaml

from flowcomm import cli
from flowcomm.synth import BENCHMARK_RISK

from conftest import write_run_inputs

SYNTH_YAML = """\
window_days: 3
background:
  n_accounts: 1200
  n_days: 6
  transactions_per_day: 200
injections:
  - kind: simple-chain
    length: 3
  - kind: smurfing
    width: 4
"""


def call(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, capsys):
    (tmp_path / "synth.yaml").write_text(SYNTH_YAML)
    code, out, _ = call(capsys, "synth", "--config", tmp_path / "synth.yaml", "--seed", 2, "--out", tmp_path / "d")
    assert code == 0 and json.loads(out)["labeled_transactions"] == 3 + 4 + 4 + 1
    (tmp_path / "risk.yaml").write_text(yaml.safe_dump({"risk": BENCHMARK_RISK.to_dict()}))
    return tmp_path


def test_stage_verbs_chain(data, capsys):
    d = data
    code, out, _ = call(capsys, "ingest", "--input", d / "d/ledger.csv", "--segments", d / "d/segments.csv",
                        "--out", d / "ing", "--top-fraction", 0)
    assert code == 0 and json.loads(out)["transactions"] == len(pd.read_csv(d / "d/ledger.csv"))
    code, out, _ = call(capsys, "build-graph", "--ledger", d / "ing/ledger", "--out", d / "g", "--window-days", 3)
    assert code == 0 and json.loads(out)["edges"] > 0
    edges = json.loads(out)["edges"]
    code, out, _ = call(capsys, "weights", "--graph", d / "g", "--out", d / "w")
    assert code == 0 and json.loads(out)["edges"] == edges
    code, out, _ = call(capsys, "prune", "--graph", d / "w/graph", "--out", d / "p", "--theta", 0.2)
    assert code == 0 and json.loads(out)["edges"] <= edges
    code, out, _ = call(capsys, "communities", "--graph", d / "p/graph", "--out", d / "c", "--window-days", 3,
                        "--stride-days", 3, "--max-size", 30)
    assert code == 0 and json.loads(out)["windows"] == 2
    code, out, _ = call(capsys, "score", "--communities", d / "c/communities.csv", "--segments", d / "ing/segments.csv",
                        "--risk-config", d / "risk.yaml", "--graph", d / "p/graph", "--ledger", d / "ing/ledger",
                        "--out", d / "s")
    assert code == 0 and set(json.loads(out)) == {"communities", "flagged"}
    assert (d / "s/cases.csv").exists() and (d / "s/audit.csv").exists()
    code, out, _ = call(capsys, "baseline", "--graph", d / "g", "--ledger", d / "ing/ledger", "--segments",
                        d / "ing/segments.csv", "--risk-config", d / "risk.yaml", "--hops", 2, 3, "--out", d / "b")
    assert code == 0 and set(json.loads(out)["flows"]) == {"2", "3"}


def test_run_and_report(tmp_path, capsys):
    cfg = write_run_inputs(tmp_path, seed=1, baseline_hops=(2,))
    code, out, _ = call(capsys, "run", "--config", cfg, "--out", tmp_path / "run")
    assert code == 0 and json.loads(out)["completed"][-1] == "report"
    code, out, _ = call(capsys, "run", "--config", cfg, "--out", tmp_path / "run")
    assert code == 0 and json.loads(out)["ran"] == []
    for kind in ("space", "diversity", "flows"):
        code, out, _ = call(capsys, "report", "--run", tmp_path / "run", "--kind", kind)
        assert code == 0 and out.count("\n") >= 2
    code, out, _ = call(capsys, "report", "--run", tmp_path / "run", "--kind", "flows")
    assert not pd.isna(pd.read_csv(io.StringIO(out))["motif_seconds"]).any()
    code, _, err = call(capsys, "report", "--run", tmp_path / "run", "--kind", "coverage")
    assert code == 2 and "labels" in err
    code, _, _ = call(capsys, "report", "--run", tmp_path / "run", "--kind", "coverage",
                      "--labels", tmp_path / "data/labels.csv", "--out", tmp_path / "cov.csv")
    assert code == 0 and (tmp_path / "cov.csv").exists()
    code, _, _ = call(capsys, "report", "--run", tmp_path / "run", "--kind", "runtime")
    assert code == 2


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert call(capsys, "no-such-verb")[0] == 2
    assert call(capsys, "prune", "--graph", tmp_path)[0] == 2  # missing --out
    (tmp_path / "cfg.yaml").write_text("ledger: x.csv\nsegments: y.csv\ntheta: 5\n")
    assert call(capsys, "run", "--config", tmp_path / "cfg.yaml", "--out", tmp_path / "r")[0] == 2
    (tmp_path / "bad.csv").write_text("id,when\n1,2\n")
    (tmp_path / "seg.csv").write_text("account,segment,bank\n")
    code, _, err = call(capsys, "ingest", "--input", tmp_path / "bad.csv", "--segments", tmp_path / "seg.csv",
                        "--out", tmp_path / "o")
    assert code == 3 and err.startswith("error:")
    code, _, _ = call(capsys, "ingest", "--input", tmp_path / "missing.csv", "--segments", tmp_path / "seg.csv",
                      "--out", tmp_path / "o")
    assert code == 3

    def broken(a):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "prune", broken)
    code, _, err = call(capsys, "prune", "--graph", tmp_path, "--out", tmp_path / "o")
    assert code == 4 and "internal error" in err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "flowcomm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "build-graph" in res.stdout


def test_runtime_verb_feeds_the_runtime_report(data, capsys):
    d = data
    code, out, _ = call(capsys, "runtime", "--input", d / "d/ledger.csv", "--segments", d / "d/segments.csv",
                        "--out", d / "rt", "--window-days", 2, "--initial-days", 2, "--risk-config", d / "risk.yaml")
    assert code == 0 and json.loads(out)["batches"] == 4
    code, out, _ = call(capsys, "report", "--run", d / "rt", "--kind", "runtime")
    table = pd.read_csv(io.StringIO(out))
    assert code == 0 and set(table["step"]) == {"graph", "weights", "communities", "score", "total"}


def test_bad_synth_config_is_a_config_error(tmp_path, capsys):
    (tmp_path / "s.yaml").write_text("background:\n  n_acounts: 10\n")
    assert call(capsys, "synth", "--config", tmp_path / "s.yaml", "--out", tmp_path / "o")[0] == 2
    assert call(capsys, "synth", "--config", tmp_path / "none.yaml", "--out", tmp_path / "o")[0] == 2
