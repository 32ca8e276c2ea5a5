"""Deterministic data sources for the tools: a templated fact corpus and market snapshots."""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .embeddings import Embedder, HashEmbedder
from .rng import Stream

DOMAINS = ("Science", "History", "Technology", "Arts", "Sports", "Geography", "Literature", "Mathematics")
SYMBOLS = ("AAPL", "MSFT", "GOOGL", "AMZN", "TSLA", "META", "NVDA", "JPM", "V", "JNJ")
ENTRIES_PER_DOMAIN = 125
DEFAULT_SEED = 20240101

_SLOT_RE = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    domain: str
    text: str

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")


def _load_json(name: str):
    return json.loads(resources.files("mcp_fidelity.data").joinpath(name).read_text("utf-8"))


@lru_cache(maxsize=None)
def seed_tables() -> dict:
    return _load_json("seed_tables.json")


@lru_cache(maxsize=None)
def query_templates() -> dict:
    return _load_json("query_templates.json")


@lru_cache(maxsize=None)
def synonyms() -> dict:
    return _load_json("synonyms.json")


_ARTICLE_RE = re.compile(r"\b([Aa]) (?=[aeiou])")


def _fill(template: str, slots: dict, rng: Stream, num_range=(100, 999_999)) -> str:
    lo, hi = num_range

    def sub(m):
        name = m.group(1)
        if name == "num":
            return f"{lo + rng.integers(hi - lo + 1):,}"
        if name == "num2":
            return str(2 + rng.integers(98))
        if name == "year":
            return str(1500 + rng.integers(521))
        return rng.choice(slots[name])

    return _ARTICLE_RE.sub(r"\1n ", _SLOT_RE.sub(sub, template))


def generate_corpus(seed: int = DEFAULT_SEED, per_domain: int = ENTRIES_PER_DOMAIN,
                    embedder: Embedder | None = None) -> list[CorpusEntry]:
    """Templated factual sentences, ``per_domain`` for each of the eight domains.

    Candidates whose bundled embedding coincides with an earlier entry are
    rejected, so entries are pairwise non-collinear.
    """
    embedder = embedder or HashEmbedder()
    tables = seed_tables()
    entries: list[CorpusEntry] = []
    seen_text: set[str] = set()
    seen_vec: set[bytes] = set()
    for d_idx, domain in enumerate(DOMAINS):
        spec = tables[domain]
        rng = Stream(seed, 1, d_idx)
        n = 0
        attempts = 0
        while n < per_domain:
            attempts += 1
            if attempts > 100 * per_domain:
                raise RuntimeError(f"could not generate {per_domain} distinct {domain} entries")
            text = _fill(rng.choice(spec["templates"]), spec["slots"], rng, spec["num_range"])
            if text in seen_text:
                continue
            key = np.round(embedder.embed(text), 12).tobytes()
            if key in seen_vec:
                continue
            seen_text.add(text)
            seen_vec.add(key)
            n += 1
            entries.append(CorpusEntry(f"{spec['prefix']}_{n:03d}", domain, text))
    return entries


def write_corpus(entries, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(asdict(e), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[CorpusEntry]:
    entries = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            doc = json.loads(line)
            try:
                e = CorpusEntry(str(doc["id"]), doc["domain"], doc["text"])
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from exc
            if e.id in ids:
                raise ValueError(f"{path}:{lineno}: duplicate id {e.id!r}")
            ids.add(e.id)
            entries.append(e)
    return entries


def trading_days(year: int = 2024, month: int = 1) -> list[str]:
    """Weekdays of the month, excluding New Year's Day."""
    days = []
    d = dt.date(year, month, 1)
    while d.month == month:
        if d.weekday() < 5 and not (d.month == 1 and d.day == 1):
            days.append(d.isoformat())
        d += dt.timedelta(days=1)
    return days


def generate_snapshots(seed: int = DEFAULT_SEED) -> dict:
    """Seeded bounded random walk of daily OHLCV per symbol over January 2024."""
    days = trading_days()
    prices: dict[str, dict] = {}
    for s_idx, sym in enumerate(SYMBOLS):
        rng = Stream(seed, 2, s_idx)
        close = round(50.0 + 450.0 * rng.random(), 2)
        series = {}
        for day in days:
            open_ = round(close * (1.0 + 0.005 * rng.normal()), 2)
            step = max(-0.05, min(0.05, 0.02 * rng.normal()))
            close = round(max(1.0, close * (1.0 + step)), 2)
            high = round(max(open_, close) * (1.0 + 0.01 * rng.random()), 2)
            low = round(min(open_, close) * (1.0 - 0.01 * rng.random()), 2)
            series[day] = {
                "open": open_, "high": high, "low": low, "close": close,
                "volume": 1_000_000 + rng.integers(49_000_000),
                "timestamp": f"{day}T16:00:00-05:00",
            }
        prices[sym] = series
    return {"prices": prices}


def validate_snapshot(doc: dict) -> None:
    prices = doc.get("prices")
    if not isinstance(prices, dict):
        raise ValueError("snapshot needs a 'prices' object")
    for sym, series in prices.items():
        if sym not in SYMBOLS:
            raise ValueError(f"unknown symbol {sym!r}; expected one of {list(SYMBOLS)}")
        for day, rec in series.items():
            dt.date.fromisoformat(day)
            o, h, l, c = rec["open"], rec["high"], rec["low"], rec["close"]
            if min(o, h, l, c) <= 0 or rec["volume"] < 0:
                raise ValueError(f"{sym} {day}: nonpositive price or negative volume")
            if not (l <= o <= h and l <= c <= h):
                raise ValueError(f"{sym} {day}: OHLC ordering violated")


def load_snapshot(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_snapshot(doc)
    return doc


def write_snapshot(doc: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


@lru_cache(maxsize=4)
def default_corpus(seed: int = DEFAULT_SEED) -> tuple[CorpusEntry, ...]:
    return tuple(generate_corpus(seed))


@lru_cache(maxsize=4)
def _default_snapshot_json(seed: int = DEFAULT_SEED) -> str:
    return json.dumps(generate_snapshots(seed))


def default_snapshot(seed: int = DEFAULT_SEED) -> dict:
    return json.loads(_default_snapshot_json(seed))
