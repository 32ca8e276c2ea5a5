"""Concentration envelopes for cumulative distortion.

Worst-case quantities use the bounded-difference constant ``c* = 1 + C*`` with
``C* = alpha / (1 - beta*B)`` (or its truncation at the re-grounding interval);
the calibrated variance factor ``gamma_hat`` exploits geometric decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


class DomainError(ValueError):
    """Parameters outside the region where a bound is defined."""


@dataclass(frozen=True)
class DependencyParams:
    alpha: float = 1.0
    beta: float = 0.7
    branching: int = 1
    reground_interval: Optional[int] = None
    delta_max: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha={self.alpha} outside [0, 1]")
        if not 0.0 <= self.beta < 1.0:
            raise DomainError(f"beta={self.beta} outside [0, 1)")
        if self.branching < 1:
            raise DomainError(f"branching={self.branching} must be >= 1")
        if self.reground_interval is not None and self.reground_interval < 1:
            raise DomainError("reground_interval must be a positive integer")
        if not 0.0 <= self.delta_max <= 1.0:
            raise DomainError(f"delta_max={self.delta_max} outside [0, 1]")
        if self.beta * self.branching >= 1.0 and self.reground_interval is None:
            raise DomainError(
                f"beta*B = {self.beta * self.branching:g} >= 1 without re-grounding")

    @property
    def beta_b(self) -> float:
        return self.beta * self.branching


def influence_constant(params: DependencyParams) -> float:
    """C*: total influence of one response on all later steps."""
    q = params.beta_b
    m = params.reground_interval
    if m is None:
        return params.alpha / (1.0 - q)
    if q == 1.0:
        return params.alpha * m
    return params.alpha * (1.0 - q ** m) / (1.0 - q)


def c_star(params: DependencyParams) -> float:
    return 1.0 + influence_constant(params)


def gamma_star(params: DependencyParams) -> float:
    c = influence_constant(params)
    return 2.0 * c + c * c


def gamma_hat(params: DependencyParams, T: int) -> float:
    """Geometric-decay variance inflation at horizon ``T``.

    alpha^2 beta^2 delta_max^2 (1 - beta^(2(T-1))) / ((1 - beta^2) T)
    """
    if T < 1:
        raise DomainError("T must be >= 1")
    b = params.beta
    if b >= 1.0:
        raise DomainError("gamma_hat requires beta < 1")
    if b == 0.0:
        return 0.0
    b2 = b * b
    scale = (params.alpha * b * params.delta_max) ** 2 / (1.0 - b2)
    return scale * (1.0 - b2 ** (T - 1)) / T


def azuma_deviation(T: int, gamma: float, eta: float) -> float:
    """sqrt(2 T (1 + gamma) ln(1/eta))."""
    if not 0.0 < eta < 1.0:
        raise DomainError(f"eta={eta} outside (0, 1)")
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    if T < 0:
        raise DomainError("T must be nonnegative")
    return math.sqrt(2.0 * T * (1.0 + gamma) * math.log(1.0 / eta))


@dataclass(frozen=True)
class Envelope:
    T: int
    per_step_rate: float
    gamma: float
    delta: float
    expected: tuple[float, ...] = field(repr=False)
    upper: tuple[float, ...] = field(repr=False)

    def deviation(self, t: int) -> float:
        return self.upper[t - 1] - self.expected[t - 1]

    def rows(self):
        for t in range(1, self.T + 1):
            yield t, self.expected[t - 1], self.upper[t - 1]


def build_envelope(T: int, r_hat: float, params: DependencyParams, delta: float = 0.05,
                   gamma: Optional[float] = None) -> Envelope:
    """Linear trend ``t * r_hat`` plus the Azuma deviation.

    ``gamma`` defaults to ``gamma_hat(params, T)``, evaluated once at the
    horizon and reused for every t.
    """
    if T < 1:
        raise DomainError("T must be >= 1")
    if r_hat < 0:
        raise DomainError("per-step rate must be nonnegative")
    g = gamma_hat(params, T) if gamma is None else gamma
    expected = tuple(t * r_hat for t in range(1, T + 1))
    upper = tuple(e + azuma_deviation(t, g, delta) for t, e in zip(range(1, T + 1), expected))
    return Envelope(T, r_hat, g, delta, expected, upper)


def _deltas(trace) -> Sequence[float]:
    return trace.deltas if hasattr(trace, "deltas") else trace


def estimate_first_step_rate(traces) -> float:
    """Mean first-step distortion over traces that have at least one step."""
    firsts = [_deltas(tr)[0] for tr in traces if len(_deltas(tr)) > 0]
    if not firsts:
        raise ValueError("no trace with at least one step")
    return math.fsum(firsts) / len(firsts)


def effective_horizon(beta: float, epsilon: float) -> int:
    """ceil(ln eps / ln beta): steps until influence falls to ``epsilon``."""
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta={beta} outside (0, 1)")
    if not 0.0 < epsilon <= 1.0:
        raise DomainError(f"epsilon={epsilon} outside (0, 1]")
    if epsilon == 1.0:
        return 0
    # rounding guards exact ratios such as ln(0.5)/ln(0.5) against 1 + 1ulp
    return math.ceil(round(math.log(epsilon) / math.log(beta), 9))


def violation_rate(traces, env: Envelope, any_step: bool = False) -> float:
    """Fraction of traces whose cumulative distortion exceeds the envelope.

    By default only D(T) at the final step is compared against ``upper[T]``.
    """
    if not traces:
        raise ValueError("no traces")
    hits = 0
    for i, tr in enumerate(traces):
        d = _deltas(tr)
        if len(d) < env.T:
            raise ValueError(f"trace {i} has {len(d)} steps, envelope needs {env.T}")
        total = 0.0
        violated = False
        for t in range(1, env.T + 1):
            total += d[t - 1]
            if any_step and total > env.upper[t - 1]:
                violated = True
        if total > env.upper[env.T - 1]:
            violated = True
        hits += violated
    return hits / len(traces)
