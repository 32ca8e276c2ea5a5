import csv
import json
import math

import pytest

import mcp_fidelity.experiments as X
from mcp_fidelity.chain import ChainError
from mcp_fidelity.experiments import PLOT_COLUMNS, TRACKS, TrackResult, emit_plot_data, run_track, track_configs


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_track_grids():
    assert [(p["T"], p["beta"], p["lam"]) for p in TRACKS["baseline"].grid] == [(10, 0.7, 0.5)]
    assert TRACKS["baseline"].chains == 50
    assert [p["lam"] for p in TRACKS["lambda_sweep"].grid] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert {p["T"] for p in TRACKS["lambda_sweep"].grid} == {30} and TRACKS["lambda_sweep"].chains == 8
    assert [p["beta"] for p in TRACKS["long_chain"].grid] == [0.5, 0.7, 0.9]
    assert {p["T"] for p in TRACKS["long_chain"].grid} == {60} and TRACKS["long_chain"].chains == 6
    assert [p["beta"] for p in TRACKS["high_beta"].grid] == [0.95, 0.98] and TRACKS["high_beta"].chains == 6
    assert [p["tool_noise"] for p in TRACKS["noise"].grid] == [0.0, 0.1, 0.2]
    assert {p["T"] for p in TRACKS["noise"].grid} == {30}


def test_overrides_beat_grid_and_base():
    cfgs = track_configs(TRACKS["lambda_sweep"], {"r_set": 0.5, "T": 12, "lambda": 0.1})
    assert all(c.r_set == 0.5 and c.T == 12 and c.lam == 0.1 for _, c in cfgs)
    assert all(c.r_emb == 0.17 for _, c in cfgs)


def test_baseline_mean_final(tmp_path):
    res = run_track("baseline", {"mode": "score", "base_rate": 0.5, "noise_sigma": 0.05, "seed": 42}, tmp_path)
    c = res.configs[0]
    assert 4.5 <= c.mean_final <= 5.5
    assert len(c.mean) == len(c.std) == len(c.envelope.upper) == 10


def test_artifacts_written(tmp_path):
    res = run_track("baseline", out_root=tmp_path, chains=7)
    out = tmp_path / "results_bundled" / "baseline"
    assert res.out_dir == out
    for name in ("traces.jsonl", "aggregate.csv", "envelopes.csv", "summary.json", "plot_baseline.csv",
                 "timing.json"):
        assert (out / name).exists(), name
    agg = _read_csv(out / "aggregate.csv")
    assert list(agg[0]) == ["track", "config_id", "t", "mean", "std", "n"]
    assert len(agg) == 10 and agg[0]["n"] == "7"
    env = _read_csv(out / "envelopes.csv")
    assert list(env[0]) == ["config_id", "t", "expected", "upper"]
    summary = json.loads((out / "summary.json").read_text())
    cfg = summary["configs"][0]
    for key in ("config", "r_hat", "beta_hat", "gamma_hat", "margin", "violation_rate"):
        assert key in cfg
    assert summary["failures"] == []
    lines = (out / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 7 * (1 + 10)


def test_summary_values_rounded_to_four_digits(tmp_path):
    run_track("baseline", out_root=tmp_path, chains=5)
    cfg = json.loads((tmp_path / "results_bundled" / "baseline" / "summary.json").read_text())["configs"][0]
    for key in ("r_hat", "gamma_hat", "margin", "mean_final"):
        assert cfg[key] == float(f"{cfg[key]:.4g}")


@pytest.mark.parametrize("track", sorted(TRACKS))
def test_determinism(tmp_path, track):
    run_track(track, out_root=tmp_path / "a", chains=2)
    run_track(track, out_root=tmp_path / "b", chains=2)
    for name in ("traces.jsonl", "summary.json", "aggregate.csv", "envelopes.csv", f"plot_{track}.csv"):
        a = (tmp_path / "a" / "results_bundled" / track / name).read_bytes()
        b = (tmp_path / "b" / "results_bundled" / track / name).read_bytes()
        assert a == b, name


def test_mean_monotone_and_margin():
    for track in ("lambda_sweep", "long_chain", "high_beta"):
        for c in run_track(track).configs:
            assert all(x <= y for x, y in zip(c.mean, c.mean[1:]))
            if c.violation_rate < 0.5:
                assert c.margin >= 1.0


def test_text_track_logs_every_tool_call(tmp_path):
    run_track("noise", out_root=tmp_path, chains=2, overrides={"T": 5})
    log = (tmp_path / "results_bundled" / "noise" / "tool_calls.jsonl").read_text().splitlines()
    assert len(log) == 3 * 2 * 5
    rec = json.loads(log[0])
    assert set(rec) == {"step", "tool", "query", "results", "latency_ms"}


def test_failed_grid_point_recorded(tmp_path, monkeypatch):
    real = X.run_chain

    def flaky(cfg, *args, **kw):
        if cfg.lam == 0.5:
            raise ChainError("synthetic failure", 3)
        return real(cfg, *args, **kw)

    monkeypatch.setattr(X, "run_chain", flaky)
    res = run_track("lambda_sweep", out_root=tmp_path, chains=2)
    assert len(res.configs) == 4
    assert res.failures[0]["step"] == 3 and "lambda=0.5" in res.failures[0]["config_id"]
    summary = json.loads((tmp_path / "results_bundled" / "lambda_sweep" / "summary.json").read_text())
    assert len(summary["failures"]) == 1


def test_plot_data_shape_and_sqrt_scaling(tmp_path):
    res = run_track("baseline", chains=5)
    rows = _read_csv(emit_plot_data(res, tmp_path / "plot.csv"))
    assert list(rows[0]) == PLOT_COLUMNS
    assert len(rows) == 10
    ratios = [(float(r["envelope_upper"]) - float(r["envelope_expected"])) / math.sqrt(int(r["t"])) for r in rows]
    assert max(ratios) - min(ratios) < 1e-9


def test_plot_data_empty_result(tmp_path):
    path = emit_plot_data(TrackResult("baseline", 0.05), tmp_path / "empty.csv")
    assert path.read_text().splitlines() == [",".join(PLOT_COLUMNS)]


def test_unknown_track():
    with pytest.raises(KeyError):
        run_track("nope")
