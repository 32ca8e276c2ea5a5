"""Hybrid semantic distortion: weighted fact-set Jaccard blended with embedding distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .embeddings import Embedder, ProviderError, embed_text, embedding_distance
from .text import chunk, count_occurrences, segments, tag

TOL = 1e-9


class ContractError(ValueError):
    """An input violated a documented precondition."""


@dataclass(frozen=True)
class Fact:
    surface: str
    weight: float


@dataclass(frozen=True)
class FactSet:
    """Facts keyed by surface; ``facts`` maps surface -> weight."""

    facts: Mapping[str, float] = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        for surface, w in self.facts.items():
            if w < 0 or math.isnan(w):
                raise ContractError(f"negative weight {w!r} for fact {surface!r}")
        if self.normalized and self.facts and abs(sum(self.facts.values()) - 1.0) > TOL:
            raise ContractError("normalized fact set weights do not sum to 1")

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "FactSet":
        return cls(dict(weights), normalized=False)

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return (Fact(s, w) for s, w in self.facts.items())

    def __contains__(self, surface):
        return surface in self.facts

    @property
    def surfaces(self) -> frozenset[str]:
        return frozenset(self.facts)

    def weight_sum(self) -> float:
        return math.fsum(self.facts.values())


@dataclass(frozen=True)
class DistortionBreakdown:
    d_set: float
    d_emb: float
    lam: float
    d_sem: float

    def __post_init__(self):
        for name in ("d_set", "d_emb", "lam", "d_sem"):
            v = getattr(self, name)
            if not (0.0 - TOL <= v <= 1.0 + TOL):
                raise ContractError(f"{name}={v} outside [0, 1]")

    @classmethod
    def combine(cls, d_set: float, d_emb: float, lam: float) -> "DistortionBreakdown":
        _check_lambda(lam)
        return cls(d_set, d_emb, lam, (1.0 - lam) * d_set + lam * d_emb)

    def to_dict(self) -> dict:
        return {"d_set": self.d_set, "d_emb": self.d_emb, "lambda": self.lam, "d_sem": self.d_sem}


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda={lam} outside [0, 1]")


def extract_facts(text: str) -> FactSet:
    """Noun-phrase facts of ``text`` with normalized term-frequency weights.

    Chunks shorter than two tokens are dropped. A fact's weight is its count of
    non-overlapping occurrences in the token stream (within punctuation
    segments) divided by the total count over the set.
    """
    segs = segments(text)
    surfaces: dict[str, list[str]] = {}
    for seg in segs:
        for c in chunk(tag(seg)):
            if len(c) >= 2:
                surfaces.setdefault(" ".join(c), c)
    if not surfaces:
        return FactSet({}, normalized=False)
    counts = {s: max(1, sum(count_occurrences(seg, c) for seg in segs)) for s, c in surfaces.items()}
    total = sum(counts.values())
    return FactSet({s: n / total for s, n in counts.items()}, normalized=True)


def weighted_jaccard(ref: FactSet, obs: FactSet) -> float:
    if not ref.facts and not obs.facts:
        return 0.0
    if not ref.facts or not obs.facts:
        return 1.0
    inter = math.fsum(min(ref.facts[f], obs.facts[f]) for f in ref.facts.keys() & obs.facts.keys())
    union = math.fsum(max(ref.facts.get(f, 0.0), obs.facts.get(f, 0.0))
                      for f in ref.facts.keys() | obs.facts.keys())
    if union == 0.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - inter / union))


def hybrid_distortion(ref_text: str, obs_text: str, lam: float, embedder: Embedder) -> DistortionBreakdown:
    _check_lambda(lam)
    d_set = weighted_jaccard(extract_facts(ref_text), extract_facts(obs_text))
    if not ref_text.strip() or not obs_text.strip():
        d_emb = 1.0
    else:
        vecs = []
        for i, t in enumerate((ref_text, obs_text)):
            try:
                vecs.append(embed_text(t, embedder))
            except ProviderError as exc:
                raise ProviderError(f"embedding failed for text {i}: {exc}", index=i, cause=exc) from exc
        d_emb = embedding_distance(*vecs)
    return DistortionBreakdown.combine(d_set, d_emb, lam)


def cumulative_distortion(deltas: Sequence[float] | Iterable[float]) -> list[float]:
    out, total = [], 0.0
    for i, d in enumerate(deltas):
        if not 0.0 <= d <= 1.0:
            raise ContractError(f"step {i + 1}: distortion {d} outside [0, 1]")
        total += d
        out.append(total)
    return out
