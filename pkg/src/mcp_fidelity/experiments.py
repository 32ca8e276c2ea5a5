"""Experiment tracks: run chains over a parameter grid, attach calibrated envelopes, write artifacts.

Layout under the output root::

    results_<responder>/<track>/traces.jsonl
                                aggregate.csv
                                envelopes.csv
                                summary.json
                                plot_<track>.csv
                                tool_calls.jsonl   (text mode only)
                                timing.json

Everything except ``tool_calls.jsonl`` (measured latencies) and
``timing.json`` is a pure function of the configuration and seed.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bounds import DependencyParams, Envelope, build_envelope, estimate_first_step_rate, gamma_hat, violation_rate
from .chain import ChainConfig, ChainError, ChainTrace, ToolBox, run_chain
from .diagnostics import fit_report
from .embeddings import CachedEmbedder, Embedder, HashEmbedder
from .mcp import ToolCallLog

DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class TrackSpec:
    name: str
    grid: tuple[dict, ...]
    chains: int
    base: dict = field(default_factory=dict)
    seed: int = 42


TRACKS: dict[str, TrackSpec] = {
    "baseline": TrackSpec("baseline", ({"T": 10, "beta": 0.7, "lam": 0.5},), chains=50),
    "lambda_sweep": TrackSpec(
        "lambda_sweep",
        tuple({"T": 30, "beta": 0.7, "lam": lam} for lam in (0.0, 0.25, 0.5, 0.75, 1.0)),
        chains=8, base={"r_set": 0.9, "r_emb": 0.17}),
    "long_chain": TrackSpec(
        "long_chain", tuple({"T": 60, "beta": b, "lam": 0.5} for b in (0.5, 0.7, 0.9)), chains=6),
    "high_beta": TrackSpec(
        "high_beta", tuple({"T": 30, "beta": b, "lam": 0.5} for b in (0.95, 0.98)), chains=6),
    "noise": TrackSpec(
        "noise", tuple({"T": 30, "beta": 0.7, "lam": 0.5, "tool_noise": n} for n in (0.0, 0.1, 0.2)),
        chains=8, base={"mode": "text"}),
}


@dataclass
class ConfigResult:
    config_id: str
    config: ChainConfig
    n_chains: int
    mean: list[float]
    std: list[float]
    envelope: Envelope
    r_hat: float
    gamma_hat: float
    beta_hat: Optional[float]
    margin: Optional[float]
    violation_rate: float
    traces: list[ChainTrace] = field(default_factory=list, repr=False)
    beta_hat_error: Optional[str] = None

    @property
    def mean_final(self) -> float:
        return self.mean[-1]

    @property
    def in_assumptions(self) -> bool:
        return self.config.beta * self.config.branching < 1.0 or self.config.reground_interval is not None


@dataclass
class TrackResult:
    track: str
    delta: float
    configs: list[ConfigResult] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    out_dir: Optional[Path] = None
    runtime_s: float = 0.0

    def by_id(self, config_id: str) -> ConfigResult:
        for c in self.configs:
            if c.config_id == config_id:
                return c
        raise KeyError(config_id)


def _sig4(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    if x == 0:
        return 0.0
    return float(f"{x:.4g}")


def _config_label(point: dict) -> str:
    names = {"lam": "lambda"}
    return ",".join(f"{names.get(k, k)}={point[k]:g}" for k in sorted(point) if k != "T") or "default"


def summarize(traces: Sequence[ChainTrace], config: ChainConfig, config_id: str,
              delta: float = DEFAULT_DELTA, max_lag: int = 10) -> ConfigResult:
    """Aggregate statistics and the calibrated envelope for one grid point."""
    cum = np.array([tr.cumulative for tr in traces], dtype=np.float64)
    n = len(traces)
    mean = cum.mean(axis=0)
    std = cum.std(axis=0, ddof=1) if n > 1 else np.zeros(cum.shape[1])
    r_hat = estimate_first_step_rate(traces)
    params = DependencyParams(alpha=1.0, beta=config.beta, branching=config.branching,
                              reground_interval=config.reground_interval, delta_max=1.0)
    env = build_envelope(config.T, r_hat, params, delta)
    fit = fit_report(traces, max_lag)
    mean_final = float(mean[-1])
    margin = env.upper[-1] / mean_final if mean_final > 0 else None
    return ConfigResult(config_id, config, n, mean.tolist(), std.tolist(), env, r_hat,
                        gamma_hat(params, config.T), fit["beta_hat"], margin,
                        violation_rate(traces, env), list(traces), fit["error"])


def track_configs(spec: TrackSpec, overrides: dict | None = None) -> list[tuple[str, ChainConfig]]:
    """Grid-point configs: track base < grid point < user overrides.

    An override that names a grid axis (say ``beta`` on ``long_chain``) pins
    that axis for every grid point; the config ids still name the grid point.
    """
    overrides = dict(overrides or {})
    if "lambda" in overrides:
        overrides["lam"] = overrides.pop("lambda")
    out = []
    for i, point in enumerate(spec.grid):
        doc = {"seed": spec.seed}
        doc.update(spec.base)
        doc.update(point)
        doc.update(overrides)
        cfg = ChainConfig(**doc)
        out.append((f"{spec.name}-{i:02d}[{_config_label(point)}]", cfg))
    return out


def run_track(spec: TrackSpec | str, overrides: dict | None = None, out_root: str | Path | None = None,
              chains: int | None = None, delta: float = DEFAULT_DELTA, embedder: Embedder | None = None,
              corpus=None, snapshot: dict | None = None, matrix=None, keep_traces: bool = True) -> TrackResult:
    """Run every grid point of a track and, if ``out_root`` is given, write its artifacts."""
    if isinstance(spec, str):
        if spec not in TRACKS:
            raise KeyError(f"unknown track {spec!r}; choose from {sorted(TRACKS)}")
        spec = TRACKS[spec]
    n_chains = chains or spec.chains
    configs = track_configs(spec, overrides)
    for _, cfg in configs:
        cfg.validate()
    responder = configs[0][1].responder if configs else "bundled"
    out_dir = None
    if out_root is not None:
        out_dir = Path(out_root) / f"results_{responder}" / spec.name
        out_dir.mkdir(parents=True, exist_ok=True)

    embedder = embedder or CachedEmbedder(HashEmbedder())
    result = TrackResult(spec.name, delta, out_dir=out_dir)
    start = time.perf_counter()
    tool_log_fh = None
    toolbox = None
    try:
        if any(cfg.mode == "text" for _, cfg in configs):
            if out_dir is not None:
                tool_log_fh = open(out_dir / "tool_calls.jsonl", "w", encoding="utf-8")
            toolbox = ToolBox.default(corpus=corpus, embedder=embedder, snapshot=snapshot, matrix=matrix,
                                      sink=ToolCallLog(tool_log_fh, keep=False))
        trace_lines: list[str] = []
        for config_id, cfg in configs:
            try:
                traces = [run_chain(cfg, toolbox, embedder=embedder, chain_index=i, config_id=config_id)
                          for i in range(n_chains)]
            except ChainError as exc:
                result.failures.append({"config_id": config_id, "step": exc.step, "error": str(exc)})
                continue
            for tr in traces:
                trace_lines.extend(tr.to_lines())
            cr = summarize(traces, cfg, config_id, delta)
            if not keep_traces:
                cr.traces = []
            result.configs.append(cr)
    finally:
        if tool_log_fh is not None:
            tool_log_fh.close()
    result.runtime_s = time.perf_counter() - start
    if out_dir is not None:
        write_artifacts(result, out_dir, trace_lines)
    return result


def summary_doc(result: TrackResult) -> dict:
    configs = []
    for c in result.configs:
        configs.append({
            "config_id": c.config_id,
            "config": c.config.to_dict(),
            "n_chains": c.n_chains,
            "r_hat": _sig4(c.r_hat),
            "beta_hat": c.beta_hat,
            "beta_hat_error": c.beta_hat_error,
            "gamma_hat": _sig4(c.gamma_hat),
            "mean_final": _sig4(c.mean_final),
            "std_final": _sig4(c.std[-1]),
            "per_step_rate": _sig4(c.mean_final / c.config.T),
            "envelope_final": _sig4(c.envelope.upper[-1]),
            "margin": _sig4(c.margin),
            "violation_rate": _sig4(c.violation_rate),
        })
    return {"track": result.track, "delta": result.delta, "configs": configs, "failures": result.failures}


def write_artifacts(result: TrackResult, out_dir: Path, trace_lines: Sequence[str]) -> None:
    with open(out_dir / "traces.jsonl", "w", encoding="utf-8") as fh:
        for line in trace_lines:
            fh.write(line + "\n")
    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track", "config_id", "t", "mean", "std", "n"])
        for c in result.configs:
            for t, (m, s) in enumerate(zip(c.mean, c.std), 1):
                w.writerow([result.track, c.config_id, t, repr(m), repr(s), c.n_chains])
    with open(out_dir / "envelopes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_id", "t", "expected", "upper"])
        for c in result.configs:
            for t, e, u in c.envelope.rows():
                w.writerow([c.config_id, t, repr(e), repr(u)])
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary_doc(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    emit_plot_data(result, out_dir / f"plot_{result.track}.csv")
    with open(out_dir / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"track": result.track, "runtime_s": result.runtime_s}, fh)
        fh.write("\n")


PLOT_COLUMNS = ["config_id", "t", "mean", "std", "envelope_expected", "envelope_upper",
                "T", "beta", "lambda", "tool_noise", "mode"]


def emit_plot_data(result: TrackResult, path: str | Path) -> Path:
    """One row per (config, t) with the empirical band and the envelope."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for c in result.configs:
            cfg = c.config
            for t, e, u in c.envelope.rows():
                w.writerow([c.config_id, t, repr(c.mean[t - 1]), repr(c.std[t - 1]), repr(e), repr(u),
                            cfg.T, cfg.beta, cfg.lam, cfg.tool_noise, cfg.mode])
    return path
