import json

import pytest
from click.testing import CliRunner

from hssrand.cli import main
from hssrand.operators import save_binary


@pytest.fixture
def run():
    runner = CliRunner()

    def _run(*args, env=None):
        return runner.invoke(main, list(args), env=env)

    return _run


SMALL = ["--n", "256", "--rank", "20", "--leaf", "32", "--d0", "8", "--dd", "8", "--p", "4"]


def test_compress_json(run):
    res = run("compress", *SMALL)
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    assert rep["hss_rank"] == 20 and rep["verified"] and rep["rel_error"] < 1e-5
    assert sum(rep["flops"].values()) == rep["flops_total"]
    assert "wall_times" not in rep


def test_compress_csv_and_timings(run):
    res = run("compress", *SMALL, "--out", "csv", "--timings")
    header, row = res.output.strip().splitlines()
    assert header.startswith("kernel,n,strategy,rtol,atol,hss_rank")
    assert row.startswith("param,256,incrementing")
    rep = json.loads(run("compress", *SMALL, "--timings").output)
    assert "total" in rep["wall_times"]


def test_pure_identity(run):
    rep = json.loads(run("compress", "--n", "256", "--beta", "0", "--leaf", "32").output)
    assert rep["hss_rank"] == 0 and rep["rel_error"] == 0.0


def test_env_vars(run):
    rep = json.loads(run("compress", *SMALL[:-4], env={"HSSRAND_P": "4", "HSSRAND_DD": "8"}).output)
    assert rep["config"]["p"] == 4 and rep["config"]["dd"] == 8


def test_no_verify(run):
    rep = json.loads(run("compress", *SMALL, "--no-verify").output)
    assert rep["rel_error"] is None and not rep["verified"]


def test_dumps(run, tmp_path):
    t, h = tmp_path / "t.json", tmp_path / "h.json"
    assert run("compress", *SMALL, "--dump-tree", str(t), "--dump-hss", str(h)).exit_code == 0
    assert json.loads(t.read_text())["n"] == 256
    assert json.loads(h.read_text())["hss_rank"] == 20


def test_dense_file(run, tmp_path):
    import numpy as np

    p = tmp_path / "a.bin"
    save_binary(p, np.eye(64) + 0.01)
    rep = json.loads(run("compress", "--kernel", f"dense:{p}", "--leaf", "16").output)
    assert rep["config"]["n"] == 64 and rep["rel_error"] < 1e-6


def test_exit_codes(run, tmp_path):
    assert run("compress", "--n", "0").exit_code == 2
    assert run("compress", "--kernel", "nope").exit_code == 2
    assert run("compress", "--kernel", f"dense:{tmp_path / 'missing.bin'}").exit_code == 2
    res = run("compress", "--n", "256", "--rank", "100", "--leaf", "32", "--d0", "8", "--dmax", "16")
    assert res.exit_code == 3
    assert run("bounds", "--sigmas", "2").exit_code == 2


def test_verification_failure(run, monkeypatch):
    import hssrand.cli as cli

    monkeypatch.setattr(cli, "measure", lambda src, H: (1.0, 1.0))
    assert run("compress", *SMALL).exit_code == 4


def test_adapt_compare(run):
    res = run("adapt-compare", *SMALL, "--rank", "40", "--rtol", "1e-10", "--atol", "1e-10")
    body = json.loads(res.output)
    modes = [r["mode"] for r in body["rows"]]
    assert modes == ["known-rank", "incrementing", "hard-restart"]
    assert body["sampling_order_ok"] is True


def test_stopping_grid(run):
    res = run("stopping-grid", *SMALL, "--decay", "--rtols", "1e-2,1e-8", "--atols", "1e-2,1e-8", "--hmt", "--out", "json")
    body = json.loads(res.output)
    assert body["diagonal_ok"]
    assert len(body["rows"]) == 4 + 2
    rank = {(r["criterion"], r["rtol"], r["atol"]): r["hss_rank"] for r in body["rows"]}
    assert rank[("new", 1e-8, 1e-8)] >= rank[("new", 1e-2, 1e-2)]


def test_bounds_csv(run):
    res = run("bounds", "--sigmas", "1,1,1,1", "--d", "10", "--tau", "2,0.5", "--trials", "5000")
    lines = res.output.strip().splitlines()
    assert lines[0] == "tau,d,bound,empirical,side,bound_raw"
    tau, d, bnd, emp, side, _ = lines[1].split(",")
    assert side == "upper" and abs(float(bnd) - 1.43e-2) < 1.43e-4 and float(emp) <= float(bnd)
    assert lines[2].split(",")[4] == "lower"


def test_bounds_clamped(run):
    out = json.loads(run("bounds", "--sigmas", "1,1", "--d", "1", "--tau", "1.1", "--trials", "0", "--out", "json").output)
    row = out["rows"][0]
    assert row["bound_raw"] > 1 and row["bound"] == 1.0 and row["empirical"] is None


def test_cost(run):
    res = run("cost", "--r", "512", "--P", "1,4,16,64")
    rows = [line.split(",") for line in res.output.strip().splitlines()]
    head = rows[0]
    ratio = head.index("message_ratio")
    assert [r[ratio] for r in rows[2:]] == ["0.8333333333333334"] * 3
    assert rows[1][head.index("doubling_messages")] == "0.0"
    assert "legacy_id_messages" not in head
    assert "legacy_id_messages" in run("cost", "--legacy").output
