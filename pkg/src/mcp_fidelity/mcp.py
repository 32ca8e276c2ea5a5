"""JSON-RPC 2.0 tool server with the knowledge-retrieval and financial tools.

Wire format is newline-delimited JSON. Responses are serialized with sorted
keys and compact separators so identical requests give identical bytes.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import logging
import socketserver
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, TextIO

import numpy as np

from .corpus import CorpusEntry, default_corpus, default_snapshot, validate_snapshot
from .embeddings import Embedder, HashEmbedder, normalize, read_sidecar

log = logging.getLogger(__name__)

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

FINANCIAL_UNCERTAINTY = 0.01
DEFAULT_PRICE_DATE = "2024-01-15"


class RpcError(Exception):
    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data

    def to_dict(self) -> dict:
        err = {"code": self.code, "message": self.message}
        if self.data is not None:
            err["data"] = self.data
        return err


class ConfigurationError(RuntimeError):
    pass


# -- messages -----------------------------------------------------------------

def serialize(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_message(line: str | bytes) -> Any:
    try:
        return json.loads(line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise RpcError(PARSE_ERROR, "Parse error", str(exc)) from exc


def make_response(req_id, result=None, error: RpcError | None = None,
                  uncertainty: float | None = None) -> dict:
    resp: dict[str, Any] = {"jsonrpc": "2.0", "id": req_id}
    if error is not None:
        resp["error"] = error.to_dict()
    else:
        resp["result"] = result
        if uncertainty is not None:
            resp["uncertainty"] = uncertainty
    return resp


# -- registry -----------------------------------------------------------------

_TYPES = {
    "string": (str,),
    "integer": (int,),
    "number": (int, float),
    "boolean": (bool,),
}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = True
    default: Any = None
    enum: Optional[tuple] = None
    minimum: Optional[float] = None

    def check(self, value):
        ok = isinstance(value, _TYPES[self.type])
        if self.type in ("integer", "number") and isinstance(value, bool):
            ok = False
        if not ok:
            raise RpcError(INVALID_PARAMS, f"Invalid params: {self.name!r} must be {self.type}",
                           {"param": self.name})
        if self.enum is not None and value not in self.enum:
            raise RpcError(INVALID_PARAMS, f"Invalid params: {self.name!r} must be one of {list(self.enum)}",
                           {"param": self.name})
        if self.minimum is not None and value < self.minimum:
            raise RpcError(INVALID_PARAMS, f"Invalid params: {self.name!r} must be >= {self.minimum}",
                           {"param": self.name})


# handlers return (result, uncertainty-or-None)
Handler = Callable[..., tuple[Any, Optional[float]]]


@dataclass
class Tool:
    name: str
    params: Sequence[ParamSpec]
    handler: Handler
    log_name: str = ""
    query_param: Optional[str] = None

    def schema(self) -> dict:
        props, required = {}, []
        for p in self.params:
            props[p.name] = {"type": p.type}
            if p.enum is not None:
                props[p.name]["enum"] = list(p.enum)
            if p.required:
                required.append(p.name)
        return {"name": self.name, "inputSchema": {"type": "object", "properties": props,
                                                   "required": required}}


@dataclass
class Registry:
    tools: dict[str, Tool] = field(default_factory=dict)

    def register(self, tool: Tool) -> None:
        if tool.name in self.tools:
            raise ValueError(f"tool {tool.name!r} already registered")
        self.tools[tool.name] = tool

    def get(self, name: str) -> Optional[Tool]:
        return self.tools.get(name)


@dataclass(frozen=True)
class CallDescriptor:
    tool: Tool
    params: dict
    id: Any
    context: dict
    is_notification: bool = False


def validate_request(msg: Any, registry: Registry) -> CallDescriptor:
    if not isinstance(msg, dict):
        raise RpcError(INVALID_REQUEST, "Invalid Request: expected a JSON object")
    if msg.get("jsonrpc") != "2.0":
        raise RpcError(INVALID_REQUEST, "Invalid Request: jsonrpc must be \"2.0\"")
    method = msg.get("method")
    if not isinstance(method, str):
        raise RpcError(INVALID_REQUEST, "Invalid Request: method must be a string")
    has_id = "id" in msg
    req_id = msg.get("id")
    if has_id and (isinstance(req_id, bool) or not isinstance(req_id, (int, str))):
        raise RpcError(INVALID_REQUEST, "Invalid Request: id must be an integer or string")
    params = msg.get("params", {})
    if not isinstance(params, dict):
        raise RpcError(INVALID_REQUEST, "Invalid Request: params must be an object")
    context = msg.get("context", {})
    if context is None:
        context = {}
    if not isinstance(context, dict):
        raise RpcError(INVALID_REQUEST, "Invalid Request: context must be an object")
    if "session_id" in context and not isinstance(context["session_id"], str):
        raise RpcError(INVALID_REQUEST, "Invalid Request: context.session_id must be a string")

    tool = registry.get(method)
    if tool is None:
        raise RpcError(METHOD_NOT_FOUND, f"Method not found: {method}", {"method": method})
    known = {p.name for p in tool.params}
    extra = sorted(set(params) - known)
    if extra:
        raise RpcError(INVALID_PARAMS, f"Invalid params: unexpected {extra}", {"unexpected": extra})
    filled = {}
    for p in tool.params:
        if p.name in params:
            p.check(params[p.name])
            filled[p.name] = params[p.name]
        elif p.required:
            raise RpcError(INVALID_PARAMS, f"Invalid params: missing required {p.name!r}",
                           {"missing": p.name})
        else:
            filled[p.name] = p.default
    return CallDescriptor(tool, filled, req_id, context, not has_id)


# -- tools --------------------------------------------------------------------

class KnowledgeRetriever:
    """Cosine top-k search over a fixed corpus with a per-query result cache."""

    def __init__(self, corpus: Sequence[CorpusEntry], embedder: Embedder | None = None,
                 matrix: np.ndarray | None = None):
        if not corpus:
            raise ConfigurationError("knowledge corpus is empty")
        self.corpus = list(corpus)
        self.embedder = embedder or HashEmbedder()
        if matrix is None:
            matrix = np.vstack(self.embedder.embed_batch([e.text for e in self.corpus]))
        else:
            if matrix.shape[0] != len(self.corpus):
                raise ConfigurationError(
                    f"embedding matrix has {matrix.shape[0]} rows for {len(self.corpus)} entries")
            matrix = np.vstack([normalize(r) for r in matrix])
        self.matrix = matrix
        self._id_rank = np.argsort(np.array([e.id for e in self.corpus]), kind="stable")
        self._id_order = np.empty(len(self.corpus), dtype=np.int64)
        self._id_order[self._id_rank] = np.arange(len(self.corpus))
        self._cache: dict[tuple[str, int], tuple[list[str], float]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_sidecar(cls, corpus, sidecar_path, embedder=None):
        return cls(corpus, embedder, read_sidecar(sidecar_path))

    def search(self, query: str, top_k: int = 3) -> tuple[list[str], float]:
        """Top-k texts and the best cosine score."""
        if top_k < 1:
            raise ValueError("top_k must be positive")
        key = (query, top_k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        q = self.embedder.embed(query)
        scores = self.matrix @ q
        # descending score, ascending id on ties
        order = np.lexsort((self._id_order, -scores))[:top_k]
        texts = [self.corpus[i].text for i in order]
        best = float(scores[order[0]])
        with self._lock:
            hit = self._cache.setdefault(key, (texts, best))
        return hit

    def retrieve(self, query: str, top_k: int = 3) -> list[str]:
        return list(self.search(query, top_k)[0])

    def entry_for_text(self, text: str) -> Optional[CorpusEntry]:
        for e in self.corpus:
            if e.text == text:
                return e
        return None


class FinancialData:
    """Lookups over a cached market snapshot."""

    def __init__(self, snapshot: dict):
        validate_snapshot(snapshot)
        self.prices = snapshot["prices"]

    def get_price(self, symbol: str, date: str = DEFAULT_PRICE_DATE) -> dict:
        series = self.prices.get(symbol)
        if series is None:
            raise RpcError(INVALID_PARAMS, f"Unknown symbol: {symbol}", {"missing": "symbol", "symbol": symbol})
        rec = series.get(date)
        if rec is None:
            raise RpcError(INVALID_PARAMS, f"No data for {symbol} on {date}", {"missing": "date", "date": date})
        return dict(rec)

    def get_trend(self, symbol: str, days: int = 30) -> dict:
        """Trend over the trailing ``days`` calendar days ending at the last snapshot date."""
        series = self.prices.get(symbol)
        if series is None:
            raise RpcError(INVALID_PARAMS, f"Unknown symbol: {symbol}", {"missing": "symbol", "symbol": symbol})
        dates = sorted(series)
        last = dt.date.fromisoformat(dates[-1])
        start = last - dt.timedelta(days=days - 1)
        if start < dt.date.fromisoformat(dates[0]):
            raise RpcError(INVALID_PARAMS, f"Insufficient history: {days} days requested for {symbol}",
                           {"available_from": dates[0], "requested_from": start.isoformat()})
        window = [d for d in dates if dt.date.fromisoformat(d) >= start]
        if len(window) < 2:
            raise RpcError(INVALID_PARAMS, f"Insufficient history: {len(window)} dates in window",
                           {"dates": len(window)})
        first, last_close = series[window[0]]["close"], series[window[-1]]["close"]
        return {"symbol": symbol, "trend": "up" if last_close > first else "down",
                "change_pct": 100.0 * (last_close - first) / first}


def build_registry(retriever: KnowledgeRetriever | None = None,
                   financial: FinancialData | None = None) -> Registry:
    reg = Registry()
    if retriever is not None:
        def knowledge(query, top_k):
            texts, best = retriever.search(query, top_k)
            return list(texts), min(1.0, max(0.0, 1.0 - best))

        reg.register(Tool("knowledge_retrieval",
                          [ParamSpec("query", "string"),
                           ParamSpec("top_k", "integer", False, 3, minimum=1)],
                          knowledge, query_param="query"))
    if financial is not None:
        def price(symbol, date):
            rec = financial.get_price(symbol, date)
            return {"price": rec["close"], "timestamp": rec["timestamp"]}, FINANCIAL_UNCERTAINTY

        def trend(symbol, days):
            return financial.get_trend(symbol, days), FINANCIAL_UNCERTAINTY

        reg.register(Tool("get_stock_price",
                          [ParamSpec("symbol", "string"),
                           ParamSpec("date", "string", False, DEFAULT_PRICE_DATE)],
                          price, log_name="financial_data"))
        reg.register(Tool("get_price_trend",
                          [ParamSpec("symbol", "string"),
                           ParamSpec("days", "integer", False, 30, minimum=1)],
                          trend, log_name="financial_data"))
    return reg


def default_registry() -> Registry:
    return build_registry(KnowledgeRetriever(default_corpus()), FinancialData(default_snapshot()))


# -- logging ------------------------------------------------------------------

@dataclass(frozen=True)
class ToolCallRecord:
    step: int
    tool: str
    query: str
    results: Any
    latency_ms: float

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.latency_ms < 0:
            raise ValueError("latency must be nonnegative")

    def to_dict(self) -> dict:
        return {"step": self.step, "tool": self.tool, "query": self.query,
                "results": self.results, "latency_ms": self.latency_ms}


class ToolCallLog:
    """JSONL sink for tool-call records; keeps an in-memory copy as well.

    Write failures are recorded in ``errors`` and logged, never raised.
    """

    def __init__(self, stream: TextIO | None = None, keep: bool = True):
        self.stream = stream
        self.keep = keep
        self.records: list[ToolCallRecord] = []
        self.errors: list[str] = []
        self.count = 0
        self._lock = threading.Lock()

    def next_step(self) -> int:
        return self.count + 1

    def append(self, record: ToolCallRecord) -> None:
        with self._lock:
            self.count += 1
            if self.keep:
                self.records.append(record)
            if self.stream is not None:
                try:
                    self.stream.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
                    self.stream.flush()
                except Exception as exc:  # sink failure must not break dispatch
                    self.errors.append(str(exc))
                    log.error("tool-call log write failed: %s", exc)


# -- dispatch and serving -----------------------------------------------------

def dispatch(msg: Any, registry: Registry, sink: ToolCallLog | None = None) -> Optional[dict]:
    """Validate, route and log one request; returns None for notifications."""
    req_id = msg.get("id") if isinstance(msg, dict) else None
    if isinstance(req_id, bool) or not isinstance(req_id, (int, str)):
        req_id = None
    try:
        call = validate_request(msg, registry)
    except RpcError as err:
        return make_response(req_id, error=err)

    tool = call.tool
    step = call.context.get("step")
    if sink is not None and not (isinstance(step, int) and not isinstance(step, bool) and step >= 1):
        step = sink.next_step()
    start = time.perf_counter()
    uncertainty = None
    try:
        result, uncertainty = tool.handler(**call.params)
        error = None
    except RpcError as err:
        result, error = None, err
    except Exception as exc:
        log.exception("tool %s failed", tool.name)
        result, error = None, RpcError(INTERNAL_ERROR, "Internal error", str(exc))
    latency_ms = (time.perf_counter() - start) * 1000.0

    if sink is not None:
        query = (call.params[tool.query_param] if tool.query_param
                 else json.dumps(call.params, sort_keys=True))
        logged = result if error is None else {"error": error.to_dict()}
        try:
            sink.append(ToolCallRecord(step, tool.log_name or tool.name, query, logged, latency_ms))
        except Exception as exc:
            log.error("tool-call logging failed: %s", exc)

    if call.is_notification:
        return None
    return make_response(call.id, result, error, uncertainty)


def handle_line(line: str | bytes, registry: Registry, sink: ToolCallLog | None = None) -> Optional[str]:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            return serialize(make_response(None, error=RpcError(PARSE_ERROR, "Parse error", str(exc))))
    if not line.strip():
        return None
    try:
        msg = parse_message(line)
    except RpcError as err:
        return serialize(make_response(None, error=err))
    if isinstance(msg, list):
        return serialize(make_response(None, error=RpcError(INVALID_REQUEST, "Invalid Request: batches are not supported")))
    resp = dispatch(msg, registry, sink)
    return None if resp is None else serialize(resp)


def serve_stream(reader: TextIO, writer: TextIO, registry: Registry, sink: ToolCallLog | None = None) -> int:
    """Answer newline-delimited requests until EOF; returns the number of lines read."""
    n = 0
    for line in reader:
        n += 1
        out = handle_line(line, registry, sink)
        if out is not None:
            writer.write(out + "\n")
            writer.flush()
    return n


def serve_stdio(registry: Registry, sink: ToolCallLog | None = None) -> int:
    return serve_stream(sys.stdin, sys.stdout, registry, sink)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        for raw in self.rfile:
            out = handle_line(raw, server.registry, server.sink)  # type: ignore[attr-defined]
            if out is not None:
                self.wfile.write((out + "\n").encode("utf-8"))
                self.wfile.flush()


class ToolServer(socketserver.ThreadingTCPServer):
    """TCP server; each connection is answered in request order on its own thread."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], registry: Registry, sink: ToolCallLog | None = None):
        self.registry = registry
        self.sink = sink
        super().__init__(address, _Handler)


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"bad TCP address {addr!r}; expected host:port")
    return host or "127.0.0.1", int(port)


def call_lines(lines: Sequence[str], registry: Registry | None = None) -> list[str]:
    """Run request lines through a fresh in-memory server and return response lines."""
    registry = registry or default_registry()
    out = io.StringIO()
    serve_stream(io.StringIO("".join(l if l.endswith("\n") else l + "\n" for l in lines)), out, registry)
    return out.getvalue().splitlines()
