"""Adaptive query-chain simulator.

A latent AR(1) driver ``x`` carries the step-to-step dependence:
``x <- beta * x + sqrt(1 - beta^2) * xi``, so Corr(x_t, x_{t+k}) = beta^k once
stationary. In score mode the driver shifts the distortion components
directly; in text mode it sets the intensity of corruption operators applied
to tool output before the hybrid metric is measured.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .corpus import CorpusEntry, default_corpus, default_snapshot, query_templates, seed_tables, synonyms
from .embeddings import CachedEmbedder, Embedder, HashEmbedder
from .mcp import FinancialData, KnowledgeRetriever, Registry, ToolCallLog, ToolCallRecord, build_registry, dispatch
from .metric import DistortionBreakdown, extract_facts, hybrid_distortion
from .rng import Stream, chain_stream

MODES = ("score", "text")
RESPONDERS = ("bundled", "external")

# stream labels under a chain's key
_DEP, _QUERY, _CORRUPT = 1, 2, 3


class ChainError(RuntimeError):
    """A step failed; ``partial`` holds the trace up to the failing step."""

    def __init__(self, message: str, step: int, partial: "ChainTrace | None" = None):
        super().__init__(message)
        self.step = step
        self.partial = partial


@dataclass
class ChainConfig:
    T: int = 10
    beta: float = 0.7
    lam: float = 0.5
    seed: int = 42
    mode: str = "score"
    base_rate: float = 0.5
    noise_sigma: float = 0.05
    tool_noise: float = 0.0
    reground_interval: Optional[int] = None
    branching: int = 1
    responder: str = "bundled"
    r_set: Optional[float] = None
    r_emb: Optional[float] = None
    top_k: int = 3

    @property
    def rate_set(self) -> float:
        return self.base_rate if self.r_set is None else self.r_set

    @property
    def rate_emb(self) -> float:
        return self.base_rate if self.r_emb is None else self.r_emb

    def validate(self) -> "ChainConfig":
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta={self.beta} outside [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda={self.lam} outside [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("base_rate", "tool_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("r_set", "r_emb"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.reground_interval is not None and self.reground_interval < 1:
            raise ValueError("reground_interval must be a positive integer")
        if self.branching != 1:
            raise ValueError("only linear chains (branching = 1) are simulated")
        if self.beta * self.branching >= 1.0 and self.reground_interval is None:
            raise ValueError("beta*B >= 1 requires a re-grounding interval")
        if self.responder not in RESPONDERS:
            raise ValueError(f"responder must be one of {RESPONDERS}")
        if self.responder == "external":
            raise NotImplementedError("no external responder client ships in this version")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ChainConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ValueError(f"unknown chain config keys: {unknown}")
        return cls(**doc)


@dataclass(frozen=True)
class DependenceState:
    x: float = 0.0
    step: int = 0

    def reset(self) -> "DependenceState":
        return DependenceState(0.0, self.step)


def advance_dependence(state: DependenceState, beta: float, rng) -> DependenceState:
    xi = rng.normal()
    return DependenceState(beta * state.x + math.sqrt(1.0 - beta * beta) * xi, state.step + 1)


def _clip01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


# -- queries ------------------------------------------------------------------

def next_query(step: int, prior_facts: Sequence[str], beta: float, rng: Stream) -> tuple[str, bool]:
    """Follow-up on a prior fact with probability ``beta``, else a fresh seed question.

    Returns the query text and whether it was adaptive.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    templates = query_templates()
    u = rng.random()
    if prior_facts and u < beta:
        fact = rng.choice(sorted(prior_facts))
        return rng.choice(templates["adaptive"]).format(fact=fact), True
    tables = seed_tables()
    domain = rng.choice(sorted(tables))
    topic = rng.choice(tables[domain]["topics"])
    return rng.choice(templates["fresh"]).format(topic=topic), False


# -- score mode ---------------------------------------------------------------

def synthetic_step(state: DependenceState, config: ChainConfig) -> DistortionBreakdown:
    shift = config.noise_sigma * state.x
    d_set = _clip01(config.rate_set + shift)
    d_emb = _clip01(config.rate_emb + shift)
    return DistortionBreakdown.combine(d_set, d_emb, config.lam)


# -- text mode ----------------------------------------------------------------

_SENT_RE = re.compile(r"(?<=[.!?])\s+")
_WORD_RE = re.compile(r"[^\W\d_]+")
_NUMBER_RE = re.compile(r"\d+(?:,\d{3})*")


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENT_RE.split(text.strip()) if s]


def paraphrase_sentence(sentence: str, rate: float, rng: Stream) -> str:
    """Swap words from the synonym table; every pair keeps its tag class."""
    table = synonyms()

    def sub(m):
        word = m.group()
        alt = table.get(word.casefold())
        if alt is None or rng.random() >= rate:
            return word
        return alt.capitalize() if word[0].isupper() else alt

    return _WORD_RE.sub(sub, sentence)


def paraphrase(sentences: Sequence[str], rate: float, rng: Stream) -> list[str]:
    """Synonym substitution plus a shuffle of whole sentences; facts are preserved."""
    out = [paraphrase_sentence(s, rate, rng) for s in sentences]
    rng.shuffle(out)
    return out


def perturb_numbers(sentence: str, rng: Stream) -> str:
    """Change one digit of one number in the sentence (no-op without numbers)."""
    matches = list(_NUMBER_RE.finditer(sentence))
    if not matches:
        return sentence
    m = rng.choice(matches)
    digits = [i for i, ch in enumerate(m.group()) if ch.isdigit()]
    pos = rng.choice(digits)
    old = m.group()[pos]
    lo = 1 if pos == 0 else 0
    choices = [str(d) for d in range(lo, 10) if str(d) != old]
    new = m.group()[:pos] + rng.choice(choices) + m.group()[pos + 1:]
    return sentence[:m.start()] + new + sentence[m.end():]


@dataclass
class BundledResponder:
    """Renders a response from tool output with intensity-driven corruption.

    Each sentence is, with probability ``p``, deleted, swapped for another
    corpus sentence, or given a perturbed number; independently each sentence
    is paraphrased at rate ``p`` and, with probability ``p``, sentence order is
    shuffled.
    """

    corpus_texts: Sequence[str]

    def respond(self, tool_texts: Sequence[str], intensity: float, rng: Stream) -> str:
        p = _clip01(intensity)
        out = []
        for s in tool_texts:
            if rng.random() < p:
                op = rng.integers(3)
                if op == 0:
                    continue
                s = rng.choice(self.corpus_texts) if op == 1 else perturb_numbers(s, rng)
            out.append(paraphrase_sentence(s, p, rng))
        if len(out) > 1 and rng.random() < p:
            rng.shuffle(out)
        return " ".join(out)


def corrupt_tool_output(texts: Sequence[str], corpus_texts: Sequence[str], rng: Stream) -> list[str]:
    """Replace one retrieved text with a random corpus entry."""
    texts = list(texts)
    if texts:
        texts[rng.integers(len(texts))] = rng.choice(corpus_texts)
    return texts


@dataclass
class ToolBox:
    """Tool registry, call log and corpus shared by the steps of text-mode chains."""

    registry: Registry
    corpus_texts: Sequence[str]
    sink: ToolCallLog = field(default_factory=ToolCallLog)

    @classmethod
    def default(cls, corpus: Sequence[CorpusEntry] | None = None, embedder: Embedder | None = None,
                sink: ToolCallLog | None = None, snapshot: dict | None = None,
                matrix=None) -> "ToolBox":
        corpus = list(corpus or default_corpus())
        retriever = KnowledgeRetriever(corpus, embedder, matrix)
        registry = build_registry(retriever, FinancialData(snapshot or default_snapshot()))
        return cls(registry, [e.text for e in corpus], sink or ToolCallLog())

    def retrieve(self, query: str, top_k: int, step: int, session: str) -> list[str]:
        req = {"jsonrpc": "2.0", "method": "knowledge_retrieval", "id": step,
               "params": {"query": query, "top_k": top_k},
               "context": {"session_id": session, "step": step}}
        resp = dispatch(req, self.registry, self.sink)
        if "error" in resp:
            err = resp["error"]
            raise RuntimeError(f"knowledge_retrieval failed ({err['code']}): {err['message']}")
        return resp["result"]


def text_step(state: DependenceState, config: ChainConfig, tools: ToolBox, embedder: Embedder,
              query: str, rng: Stream, step: int = 1, session: str = "chain-0",
              metric: Callable = hybrid_distortion) -> tuple[str, str, DistortionBreakdown]:
    """One text-mode step; returns (ref_text, obs_text, breakdown)."""
    ideal = tools.retrieve(query, config.top_k, step, session)
    ref_text = " ".join(ideal)
    seen = ideal
    if config.tool_noise > 0 and rng.random() < config.tool_noise:
        seen = corrupt_tool_output(ideal, tools.corpus_texts, rng)
    intensity = _clip01(config.base_rate + config.noise_sigma * state.x)
    obs_text = BundledResponder(tools.corpus_texts).respond(seen, intensity, rng)
    return ref_text, obs_text, metric(ref_text, obs_text, config.lam, embedder)


# -- traces -------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    query: str
    adaptive: bool
    breakdown: DistortionBreakdown
    cumulative: float
    ref_text: Optional[str] = None
    obs_text: Optional[str] = None

    @property
    def d_sem(self) -> float:
        return self.breakdown.d_sem

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"step": self.step, "query": self.query, "adaptive": self.adaptive}
        d.update(self.breakdown.to_dict())
        d["cumulative"] = self.cumulative
        d["ref_text"] = self.ref_text
        d["obs_text"] = self.obs_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        bd = DistortionBreakdown(d["d_set"], d["d_emb"], d["lambda"], d["d_sem"])
        return cls(d["step"], d["query"], d["adaptive"], bd, d["cumulative"],
                   d.get("ref_text"), d.get("obs_text"))


@dataclass
class ChainTrace:
    config: ChainConfig
    chain_index: int = 0
    steps: list[StepRecord] = field(default_factory=list)
    tool_calls: list[ToolCallRecord] = field(default_factory=list)
    config_id: str = ""

    @property
    def deltas(self) -> list[float]:
        return [s.d_sem for s in self.steps]

    @property
    def cumulative(self) -> list[float]:
        return [s.cumulative for s in self.steps]

    def __len__(self):
        return len(self.steps)

    def to_lines(self) -> list[str]:
        """Header line with the config echo, then one line per step."""
        header = {"type": "header", "config_id": self.config_id, "chain": self.chain_index,
                  "config": self.config.to_dict()}
        lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
        for s in self.steps:
            rec = {"type": "step", "config_id": self.config_id, "chain": self.chain_index}
            rec.update(s.to_dict())
            lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
        return lines


def read_traces(lines) -> list[ChainTrace]:
    traces: list[ChainTrace] = []
    current: Optional[ChainTrace] = None
    for raw in lines:
        if not raw.strip():
            continue
        rec = json.loads(raw)
        if rec.get("type") == "header":
            current = ChainTrace(ChainConfig.from_dict(rec["config"]), rec.get("chain", 0),
                                 config_id=rec.get("config_id", ""))
            traces.append(current)
        elif rec.get("type") == "step":
            if current is None:
                raise ValueError("step record before any header")
            current.steps.append(StepRecord.from_dict(rec))
        else:
            raise ValueError(f"unknown trace record type {rec.get('type')!r}")
    return traces


def run_chain(config: ChainConfig, tools: ToolBox | None = None, metric: Callable = hybrid_distortion,
              embedder: Embedder | None = None, chain_index: int = 0, config_id: str = "") -> ChainTrace:
    """Run ``config.T`` steps of one chain.

    The dependence state is reset to 0 after every step whose index is a
    multiple of the re-grounding interval.
    """
    config.validate()
    base = chain_stream(config.seed, chain_index)
    dep_rng, query_rng, corrupt_rng = base.spawn(_DEP), base.spawn(_QUERY), base.spawn(_CORRUPT)
    trace = ChainTrace(config, chain_index, config_id=config_id)
    if config.mode == "text":
        embedder = embedder or CachedEmbedder(HashEmbedder())
        tools = tools or ToolBox.default(embedder=embedder)
        calls_before = len(tools.sink.records)
    state = DependenceState()
    total = 0.0
    prior: list[str] = []
    session = f"{config_id or 'chain'}-{chain_index}"
    m = config.reground_interval
    for t in range(1, config.T + 1):
        try:
            query, adaptive = next_query(t, prior, config.beta, query_rng)
            state = advance_dependence(state, config.beta, dep_rng)
            if config.mode == "score":
                bd = synthetic_step(state, config)
                ref_text = obs_text = None
                prior = [query_focus(query)]
            else:
                ref_text, obs_text, bd = text_step(state, config, tools, embedder, query,
                                                   corrupt_rng, t, session, metric)
                prior = sorted(extract_facts(obs_text).facts)
        except Exception as exc:
            raise ChainError(f"chain {chain_index} failed at step {t}: {exc}", t, trace) from exc
        total += bd.d_sem
        trace.steps.append(StepRecord(t, query, adaptive, bd, total, ref_text, obs_text))
        if m is not None and t % m == 0:
            state = state.reset()
    if config.mode == "text":
        trace.tool_calls = list(tools.sink.records[calls_before:])
    return trace


_FOCUS_RE = re.compile(r"about (.+?)[.?]$|^Describe (.+?) in detail|describe (.+?)\?$|figures for (.+?)\.$"
                       r"|more about (.+?)\.$|How does (.+?) relate")


def query_focus(query: str) -> str:
    """The topic or fact a query is about (used as the prior in score mode)."""
    m = _FOCUS_RE.search(query)
    if m is None:
        return query
    return next(g for g in m.groups() if g)


def run_chains(config: ChainConfig, n_chains: int, **kwargs) -> list[ChainTrace]:
    return [run_chain(config, chain_index=i, **kwargs) for i in range(n_chains)]
