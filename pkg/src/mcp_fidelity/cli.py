"""Command-line entry point.

Every subcommand writes a single JSON document to stdout. Notes and errors go
to stderr. Exit status is 0 on success, 1 on bad input or usage, 2 on an
internal error.

``run`` settings are resolved as: command-line flags, then the ``--config``
file, then built-in track defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds as B
from .chain import read_traces
from .corpus import DEFAULT_SEED, default_snapshot, generate_corpus, generate_snapshots, load_corpus, load_snapshot
from .corpus import write_corpus, write_snapshot
from .diagnostics import DEFAULT_MAX_LAG, assumption_checks, fit_report
from .embeddings import CachedEmbedder, HashEmbedder, HttpEmbedder, read_sidecar, write_sidecar
from .experiments import DEFAULT_DELTA, TRACKS, run_track, summary_doc, track_configs
from .mcp import FinancialData, KnowledgeRetriever, ToolCallLog, ToolServer, build_registry, parse_address
from .mcp import serve_stdio
from .metric import hybrid_distortion

CORPUS_FILE = "corpus.jsonl"
SNAPSHOT_FILE = "snapshots.json"
SIDECAR_FILE = "corpus_embeddings.bin"

_CHAIN_PROPS = {
    "T": {"type": "integer", "minimum": 1},
    "beta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "lambda": {"type": "number", "minimum": 0, "maximum": 1},
    "seed": {"type": "integer"},
    "mode": {"enum": ["score", "text"]},
    "base_rate": {"type": "number", "minimum": 0, "maximum": 1},
    "noise_sigma": {"type": "number", "minimum": 0},
    "tool_noise": {"type": "number", "minimum": 0, "maximum": 1},
    "reground_interval": {"type": ["integer", "null"], "minimum": 1},
    "branching": {"type": "integer", "minimum": 1},
    "responder": {"enum": ["bundled", "external"]},
    "r_set": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "r_emb": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "top_k": {"type": "integer", "minimum": 1},
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "track": {"enum": sorted(TRACKS)},
        "chains": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer"},
        "out_dir": {"type": "string"},
        "corpus": {"type": "string"},
        "snapshots": {"type": "string"},
        "sidecar": {"type": "string"},
        "chain": {"type": "object", "additionalProperties": False, "properties": _CHAIN_PROPS},
        "embedder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "provider": {"enum": ["hash", "http"]},
                "dim": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
                "endpoint": {"type": "string"},
                "timeout": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class InputError(Exception):
    """Bad user input; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    sys.stdout.flush()


def load_run_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{path}: {where}: {exc.message}") from exc
    return doc


def make_embedder(spec: dict | None):
    spec = spec or {}
    if spec.get("provider", "hash") == "http":
        if "endpoint" not in spec or "dim" not in spec:
            raise InputError("http embedder needs 'endpoint' and 'dim'")
        inner = HttpEmbedder(spec["endpoint"], spec["dim"], spec.get("timeout", 10.0))
    else:
        inner = HashEmbedder(spec.get("dim", 256), spec.get("seed", 0x4D4350))
    return CachedEmbedder(inner)


def _read_text(arg: str, literal: bool) -> str:
    if literal:
        return arg
    return Path(arg).read_text(encoding="utf-8")


# -- subcommands ----------------------------------------------------------------

def cmd_measure(args) -> int:
    emb = make_embedder({"provider": "http", "endpoint": args.endpoint, "dim": args.dim}
                        if args.endpoint else {"dim": args.dim or 256})
    ref, obs = _read_text(args.ref, args.text), _read_text(args.obs, args.text)
    _emit(hybrid_distortion(ref, obs, args.lam, emb).to_dict())
    return 0


def cmd_bounds(args) -> int:
    params = B.DependencyParams(alpha=args.alpha, beta=args.beta, branching=args.B,
                                reground_interval=args.m, delta_max=args.delta_max)
    g_hat = B.gamma_hat(params, args.T)
    g_star = B.gamma_star(params)
    doc = {
        "params": {"alpha": args.alpha, "beta": args.beta, "B": args.B, "m": args.m,
                   "delta_max": args.delta_max, "T": args.T, "eta": args.eta},
        "influence_constant": B.influence_constant(params),
        "c_star": B.c_star(params),
        "gamma_star": g_star,
        "gamma_hat": g_hat,
        "deviation": B.azuma_deviation(args.T, g_hat, args.eta),
        "deviation_gamma_star": B.azuma_deviation(args.T, g_star, args.eta),
        "horizon": B.effective_horizon(args.beta, args.epsilon) if 0 < args.beta < 1 else None,
    }
    _emit(doc)
    return 0


def cmd_horizon(args) -> int:
    _emit(B.effective_horizon(args.beta, args.epsilon))
    return 0


def resolve_run(args) -> dict:
    """Merge flags over the config file; returns keyword arguments for ``run_track``."""
    doc = load_run_config(args.config)
    track = args.track or doc.get("track")
    if track is None:
        raise InputError("no track given (use --track or set 'track' in the config file)")
    if track not in TRACKS:
        raise InputError(f"unknown track {track!r}; choose from {sorted(TRACKS)}")
    overrides = dict(doc.get("chain", {}))
    seed = args.seed if args.seed is not None else doc.get("seed")
    if seed is not None:
        overrides["seed"] = seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    corpus_path = args.corpus or doc.get("corpus")
    snap_path = args.snapshots or doc.get("snapshots")
    corpus = load_corpus(corpus_path) if corpus_path else None
    snapshot = load_snapshot(snap_path) if snap_path else None
    return {
        "spec": track,
        "overrides": overrides,
        "out_root": args.out or doc.get("out_dir") or ".",
        "chains": args.chains or doc.get("chains"),
        "delta": args.delta if args.delta is not None else doc.get("delta", DEFAULT_DELTA),
        "embedder": make_embedder(doc.get("embedder")),
        "corpus": corpus,
        "snapshot": snapshot,
        "matrix": read_sidecar(doc["sidecar"]) if doc.get("sidecar") else None,
        "keep_traces": False,
    }


def cmd_run(args) -> int:
    kw = resolve_run(args)
    try:
        for _, cfg in track_configs(TRACKS[kw["spec"]], kw["overrides"]):
            cfg.validate()
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    result = run_track(**kw)
    print(f"track {result.track}: {len(result.configs)} configs in {result.runtime_s:.2f}s -> {result.out_dir}",
          file=sys.stderr)
    doc = summary_doc(result)
    doc["out_dir"] = str(result.out_dir)
    _emit(doc)
    return 0


def _trace_files(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    files = sorted(root.rglob("traces.jsonl"))
    if not files:
        raise InputError(f"no traces.jsonl under {root}")
    return files


def cmd_diagnose(args) -> int:
    root = Path(args.traces)
    if not root.exists():
        raise InputError(f"{root} does not exist")
    groups: dict[tuple[str, str], list] = defaultdict(list)
    for path in _trace_files(root):
        with open(path, encoding="utf-8") as fh:
            for tr in read_traces(fh):
                groups[(str(path), tr.config_id)].append(tr)
    reports = []
    for (path, config_id), traces in groups.items():
        cfg = traces[0].config
        fit = fit_report(traces, args.max_lag)
        checks = assumption_checks(cfg, traces, seed=args.seed)
        reports.append({"file": path, "config_id": config_id, "n_chains": len(traces),
                        "config": cfg.to_dict(), "autocorr": fit["autocorr"], "beta_hat": fit["beta_hat"],
                        "fit_error": fit["error"], **checks})
    _emit({"configs": reports, "all_passed": all(r["all_passed"] for r in reports)})
    return 0


def _registry_from_args(args):
    corpus = load_corpus(args.corpus) if args.corpus else list(generate_corpus())
    snapshot = load_snapshot(args.snapshots) if args.snapshots else default_snapshot()
    embedder = HashEmbedder()
    if args.sidecar:
        retriever = KnowledgeRetriever(corpus, embedder, read_sidecar(args.sidecar))
    else:
        retriever = KnowledgeRetriever(corpus, embedder)
    return build_registry(retriever, FinancialData(snapshot))


def cmd_serve(args) -> int:
    registry = _registry_from_args(args)
    log_fh = open(args.log, "a", encoding="utf-8") if args.log else None
    sink = ToolCallLog(log_fh, keep=False)
    try:
        if args.stdio:
            n = serve_stdio(registry, sink)
            print(f"served {n} lines", file=sys.stderr)
            return 0
        try:
            address = parse_address(args.tcp)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        with ToolServer(address, registry, sink) as server:
            host, port = server.server_address[:2]
            _emit({"listening": f"{host}:{port}"})
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
        return 0
    finally:
        if log_fh is not None:
            log_fh.close()


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(args.seed, args.per_domain)
    snapshot = generate_snapshots(args.seed)
    write_corpus(corpus, out / CORPUS_FILE)
    write_snapshot(snapshot, out / SNAPSHOT_FILE)
    emb = HashEmbedder()
    write_sidecar(out / SIDECAR_FILE, np.vstack(emb.embed_batch([e.text for e in corpus])))
    _emit({"corpus": str(out / CORPUS_FILE), "snapshots": str(out / SNAPSHOT_FILE),
           "sidecar": str(out / SIDECAR_FILE), "entries": len(corpus), "seed": args.seed})
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcp-fidelity", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("measure", help="distortion between two texts")
    m.add_argument("ref", help="reference file (or text with --text)")
    m.add_argument("obs", help="observed file (or text with --text)")
    m.add_argument("--lambda", dest="lam", type=float, default=0.5)
    m.add_argument("--text", action="store_true", help="treat arguments as literal text")
    m.add_argument("--endpoint", help="external embedding service URL")
    m.add_argument("--dim", type=int, default=None, help="embedding dimension")
    m.set_defaults(func=cmd_measure)

    b = sub.add_parser("bounds", help="closed-form constants and deviation")
    b.add_argument("--alpha", type=float, default=1.0)
    b.add_argument("--beta", type=float, default=0.7)
    b.add_argument("--B", type=int, default=1)
    b.add_argument("--m", type=int, default=None, help="re-grounding interval")
    b.add_argument("--T", type=int, default=10)
    b.add_argument("--eta", type=float, default=0.05)
    b.add_argument("--delta-max", type=float, default=1.0)
    b.add_argument("--epsilon", type=float, default=0.05, help="threshold for the horizon field")
    b.set_defaults(func=cmd_bounds)

    h = sub.add_parser("horizon", help="effective dependence horizon")
    h.add_argument("--beta", type=float, required=True)
    h.add_argument("--epsilon", type=float, required=True)
    h.set_defaults(func=cmd_horizon)

    r = sub.add_parser("run", help="run an experiment track",
                       description="Settings precedence: flags > --config file > track defaults.")
    r.add_argument("--track", choices=sorted(TRACKS))
    r.add_argument("--config", help="RunConfig JSON file")
    r.add_argument("--chains", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["score", "text"])
    r.add_argument("--delta", type=float)
    r.add_argument("--out", help="output root (results_<responder>/<track>/ is created below it)")
    r.add_argument("--corpus")
    r.add_argument("--snapshots")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diagnose", help="autocorrelation fit and assumption checks")
    d.add_argument("--traces", required=True, help="traces.jsonl or a directory containing them")
    d.add_argument("--max-lag", type=int, default=DEFAULT_MAX_LAG)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("serve", help="JSON-RPC tool server")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--stdio", action="store_true")
    g.add_argument("--tcp", metavar="HOST:PORT")
    s.add_argument("--corpus")
    s.add_argument("--snapshots")
    s.add_argument("--sidecar")
    s.add_argument("--log", help="append tool-call records to this JSONL file")
    s.set_defaults(func=cmd_serve)

    gd = sub.add_parser("gen-data", help="write corpus, snapshots and embedding sidecar")
    gd.add_argument("--out", required=True)
    gd.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gd.add_argument("--per-domain", type=int, default=125)
    gd.set_defaults(func=cmd_gen_data)
    return p


_INPUT_ERRORS = (InputError, ValueError, KeyError, OSError, NotImplementedError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
