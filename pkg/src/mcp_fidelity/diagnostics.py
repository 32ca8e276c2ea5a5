"""Dependence diagnostics (pooled autocorrelation, decay-rate fit) and assumption checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import Embedder, HashEmbedder, check_unit_norm, is_zero_sentinel
from .metric import extract_facts, TOL
from .rng import Stream

BETA_GRID = np.round(np.arange(1000) / 1000.0, 3)
DEFAULT_MAX_LAG = 10


class UndefinedCorrelation(ValueError):
    def __init__(self, lag: int):
        super().__init__(f"autocorrelation undefined at lag {lag}: zero variance")
        self.lag = lag


@dataclass(frozen=True)
class AutocorrEstimate:
    lags: tuple[int, ...]
    rho: tuple[float, ...]
    n_pairs: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"lags": list(self.lags), "rho": list(self.rho), "n_pairs": list(self.n_pairs)}


def _series(tr) -> np.ndarray:
    d = tr.deltas if hasattr(tr, "deltas") else tr
    return np.asarray(d, dtype=np.float64)


def autocorrelation(traces, max_lag: int = DEFAULT_MAX_LAG) -> AutocorrEstimate:
    """Pearson correlation of (delta_t, delta_{t+k}) pooled over chains and t."""
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    series = [_series(tr) for tr in traces]
    if not series:
        raise ValueError("no traces")
    for i, s in enumerate(series):
        if len(s) < max_lag + 1:
            raise ValueError(f"trace {i} has {len(s)} steps; need at least {max_lag + 1}")
    lags, rhos, counts = [], [], []
    for k in range(1, max_lag + 1):
        a = np.concatenate([s[:-k] for s in series])
        b = np.concatenate([s[k:] for s in series])
        a = a - a.mean()
        b = b - b.mean()
        va, vb = float(np.dot(a, a)), float(np.dot(b, b))
        if va <= 1e-24 or vb <= 1e-24:
            raise UndefinedCorrelation(k)
        r = float(np.dot(a, b)) / math.sqrt(va * vb)
        lags.append(k)
        rhos.append(max(-1.0, min(1.0, r)))
        counts.append(len(a))
    return AutocorrEstimate(tuple(lags), tuple(rhos), tuple(counts))


def fit_beta(est: AutocorrEstimate) -> float:
    """argmin over beta in {0, 0.001, ..., 0.999} of sum_k (rho_k - beta^k)^2; ties go low."""
    if len(est.lags) < 2:
        raise ValueError("fit_beta needs at least 2 lags")
    lags = np.asarray(est.lags, dtype=np.float64)
    rho = np.asarray(est.rho, dtype=np.float64)
    sse = ((rho[None, :] - BETA_GRID[:, None] ** lags[None, :]) ** 2).sum(axis=1)
    return float(BETA_GRID[int(np.argmin(sse))])  # argmin returns the first, i.e. smallest, minimizer


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _get(config, name, default=None):
    if isinstance(config, dict):
        key = {"lam": "lambda"}.get(name, name)
        return config.get(key, default)
    return getattr(config, name, default)


def assumption_checks(config, traces: Sequence = (), embedder: Embedder | None = None,
                      n_samples: int = 200, seed: int = 0) -> dict:
    """Pass/fail report over the runtime-checkable modelling assumptions."""
    embedder = embedder or HashEmbedder()
    checks: list[Check] = []

    beta = float(_get(config, "beta", 0.0))
    B = int(_get(config, "branching", 1))
    m = _get(config, "reground_interval")
    ok = beta * B < 1.0 or m is not None
    checks.append(Check("bounded_branching", ok,
                        f"beta*B = {beta * B:.4g}" + ("" if m is None else f", re-grounding every {m}")))

    bad = None
    for ci, tr in enumerate(traces):
        for si, d in enumerate(_series(tr), 1):
            if not (0.0 <= d <= 1.0) or math.isnan(d):
                label = getattr(tr, "chain_index", ci)
                bad = f"chain {label} step {si}: distortion {d} outside [0, 1]"
                break
        if bad:
            break
    checks.append(Check("bounded_distortion", bad is None, bad or f"{len(traces)} traces within [0, 1]"))

    texts = _sample_texts(traces, n_samples)
    vecs = embedder.embed_batch(texts) if texts else []
    norm_bad = [i for i, v in enumerate(vecs) if not check_unit_norm(v)]
    checks.append(Check("embedding_normalization", not norm_bad,
                        f"{len(vecs)} embeddings checked" if not norm_bad
                        else f"{len(norm_bad)} embeddings off unit norm, first text index {norm_bad[0]}"))

    w_bad = []
    for i, t in enumerate(texts):
        fs = extract_facts(t)
        if fs.facts and abs(fs.weight_sum() - 1.0) > TOL:
            w_bad.append(i)
    checks.append(Check("weight_normalization", not w_bad,
                        f"{len(texts)} fact sets checked" if not w_bad
                        else f"{len(w_bad)} fact sets do not sum to 1"))

    live = [v for v in vecs if not is_zero_sentinel(v)]
    rng = Stream(seed)
    worst = -math.inf
    if len(live) >= 2:
        dim = len(live[0])
        for _ in range(n_samples):
            x, y = live[rng.integers(len(live))], live[rng.integers(len(live))]
            a = np.array([rng.normal() for _ in range(dim)])
            a /= np.linalg.norm(a)
            gap = abs(float(x @ a) - float(y @ a)) - float(np.linalg.norm(x - y))
            worst = max(worst, gap)
    checks.append(Check("embedding_regularity", worst <= 1e-12,
                        "not enough embeddings sampled" if worst == -math.inf
                        else f"max |cos(x,a)-cos(y,a)| - ||x-y|| = {worst:.3g}"))

    return {"checks": [c.to_dict() for c in checks], "all_passed": all(c.passed for c in checks)}


def _sample_texts(traces, n: int) -> list[str]:
    texts: list[str] = []
    for tr in traces:
        for s in getattr(tr, "steps", []):
            for t in (s.ref_text, s.obs_text, s.query):
                if t:
                    texts.append(t)
                    if len(texts) >= n:
                        return texts
    if len(texts) < 2:
        from .corpus import default_corpus
        texts.extend(e.text for e in default_corpus()[: max(0, n - len(texts))])
    return texts


def fit_report(traces, max_lag: int = DEFAULT_MAX_LAG) -> dict:
    """Autocorrelation and fitted beta, or the reason they are undefined."""
    horizon = min(len(_series(tr)) for tr in traces) if traces else 0
    k = min(max_lag, horizon - 1)
    if k < 2:
        return {"autocorr": None, "beta_hat": None, "error": f"chains too short for lag fit ({horizon} steps)"}
    try:
        est = autocorrelation(traces, k)
    except UndefinedCorrelation as exc:
        return {"autocorr": None, "beta_hat": None, "error": str(exc)}
    return {"autocorr": est.to_dict(), "beta_hat": fit_beta(est), "error": None}
