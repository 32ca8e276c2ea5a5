"""Unit-norm text embeddings behind a small provider contract.

``HashEmbedder`` is the bundled deterministic provider: a hashed bag of
tokens, L2-normalized. ``HttpEmbedder`` talks to an external service that
accepts ``{"texts": [...]}`` and answers ``{"embeddings": [[...], ...]}``.
Empty text maps to the all-zero sentinel, whose distance to anything is 1.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .text import tokenize

DEFAULT_DIM = 256
DEFAULT_SEED = 0x4D4350  # "MCP"
NORM_TOL = 1e-6


class ProviderError(RuntimeError):
    """An embedding provider failed; ``index`` names the offending text if known."""

    def __init__(self, message: str, index: int | None = None, cause: BaseException | None = None):
        super().__init__(message)
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class ProviderDescriptor:
    name: str
    dim: int
    deterministic: bool

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("embedding dimension must be >= 2")


class Embedder(Protocol):
    descriptor: ProviderDescriptor

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def zero_sentinel(dim: int) -> np.ndarray:
    return np.zeros(dim)


def is_zero_sentinel(v: np.ndarray) -> bool:
    return not np.any(v)


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        return np.zeros_like(v)
    return v / norm


class HashEmbedder:
    """Hashed bag-of-tokens counts, L2-normalized.

    Each token is hashed with keyed BLAKE2b (8-byte digest, key = seed) and the
    digest, read little-endian, picks the bucket. The vector depends only on
    the token multiset, so word order does not matter.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = DEFAULT_SEED):
        self.descriptor = ProviderDescriptor("hashed-bag-of-tokens", dim, True)
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little")
        self._buckets: dict[str, int] = {}

    def bucket(self, token: str) -> int:
        b = self._buckets.get(token)
        if b is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
            b = int.from_bytes(digest, "little") % self.dim
            self._buckets[token] = b
        return b

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[self.bucket(tok)] += 1.0
        return normalize(v)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class HttpEmbedder:
    """Client for an external embedding service."""

    def __init__(self, endpoint: str, dim: int, timeout: float = 10.0, name: str = "http"):
        self.descriptor = ProviderDescriptor(name, dim, False)
        self.endpoint = endpoint
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            return zero_sentinel(self.descriptor.dim)
        return external_embed_batch([text], self.endpoint, self.timeout, dim=self.descriptor.dim)[0]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = [zero_sentinel(self.descriptor.dim) for _ in texts]
        live = [i for i, t in enumerate(texts) if t.strip()]
        if live:
            vecs = external_embed_batch([texts[i] for i in live], self.endpoint, self.timeout,
                                        dim=self.descriptor.dim)
            for i, v in zip(live, vecs):
                out[i] = v
        return out


def _post_json(endpoint: str, body: bytes, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(endpoint, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def external_embed_batch(texts: Sequence[str], endpoint: str, timeout: float = 10.0,
                         dim: int | None = None) -> list[np.ndarray]:
    """POST texts to an embedding service and return renormalized vectors.

    Transport failures (connection refused, reset, timeout) are retried once.
    """
    if not texts:
        raise ValueError("external_embed_batch needs a nonempty list")
    body = json.dumps({"texts": list(texts)}).encode("utf-8")
    last_exc: BaseException | None = None
    for _attempt in range(2):
        try:
            status, payload = _post_json(endpoint, body, timeout)
            break
        except (urllib.error.URLError, OSError) as exc:
            last_exc = exc
    else:
        raise ProviderError(f"embedding service unreachable: {last_exc}", cause=last_exc)

    if status != 200:
        raise ProviderError(f"embedding service returned status {status}")
    try:
        doc = json.loads(payload)
        rows = doc["embeddings"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProviderError(f"malformed embedding response: {exc}", cause=exc) from exc
    if not isinstance(rows, list) or len(rows) != len(texts):
        got = len(rows) if isinstance(rows, list) else "non-list"
        raise ProviderError(f"expected {len(texts)} embeddings, got {got}")
    out = []
    for i, row in enumerate(rows):
        try:
            v = np.asarray(row, dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise ProviderError(f"embedding {i} is not numeric", index=i, cause=exc) from exc
        if v.ndim != 1 or (dim is not None and v.shape[0] != dim):
            raise ProviderError(f"embedding {i} has shape {v.shape}, expected ({dim},)", index=i)
        if not np.any(v):
            raise ProviderError(f"embedding {i} is the zero vector", index=i)
        out.append(normalize(v))
    return out


class CachedEmbedder:
    """In-memory text -> vector cache in front of another provider."""

    def __init__(self, inner: Embedder):
        self.inner = inner
        self.descriptor = inner.descriptor
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        v = self._cache.get(text)
        if v is None:
            v = self.inner.embed(text)
            with self._lock:
                v = self._cache.setdefault(text, v)
        return v

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            vecs = self.inner.embed_batch(missing)
            with self._lock:
                for t, v in zip(missing, vecs):
                    self._cache.setdefault(t, v)
        return [self._cache[t] for t in texts]

    def __len__(self):
        return len(self._cache)


def embed_text(text: str, embedder: Embedder) -> np.ndarray:
    if not text.strip():
        return zero_sentinel(embedder.descriptor.dim)
    return embedder.embed(text)


def embed_fact_set(fs, embedder: Embedder, weighted: bool = True) -> np.ndarray:
    """Mean of per-fact embeddings (weight-weighted by default), renormalized."""
    facts = fs.facts
    if not facts:
        return zero_sentinel(embedder.descriptor.dim)
    surfaces = sorted(facts)
    vecs = embedder.embed_batch(surfaces)
    if weighted:
        w = np.array([facts[s] for s in surfaces], dtype=np.float64)
        if w.sum() == 0.0:
            w = np.ones_like(w)
    else:
        w = np.ones(len(surfaces))
    return normalize(np.average(np.vstack(vecs), axis=0, weights=w))


def embedding_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1 - cos(a, b)) / 2, or 1 when either side is the zero sentinel."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if is_zero_sentinel(a) or is_zero_sentinel(b):
        return 1.0
    cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    cos = min(1.0, max(-1.0, cos))
    return (1.0 - cos) / 2.0


def check_unit_norm(v: np.ndarray, tol: float = NORM_TOL) -> bool:
    return is_zero_sentinel(v) or abs(float(np.linalg.norm(v)) - 1.0) <= tol


def write_sidecar(path: str | Path, matrix: np.ndarray) -> None:
    """Little-endian float32 row-major matrix behind a ``<u32 rows, u32 dim>`` header."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    rows, dim = m.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", rows, dim))
        fh.write(m.tobytes())


def read_sidecar(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("sidecar file too short for header")
    rows, dim = struct.unpack("<II", raw[:8])
    expected = 8 + rows * dim * 4
    if len(raw) != expected:
        raise ValueError(f"sidecar size {len(raw)} does not match header ({expected})")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(rows, dim).astype(np.float64)
