"""Run every experiment track and print one summary line per grid point.

    python3 scripts/run_all_tracks.py --out results
"""

import argparse

from mcp_fidelity.experiments import TRACKS, run_track


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output root directory")
    ap.add_argument("--chains", type=int, default=None, help="override the per-track chain count")
    ap.add_argument("--tracks", nargs="*", default=sorted(TRACKS), choices=sorted(TRACKS))
    args = ap.parse_args()
    for name in args.tracks:
        res = run_track(name, out_root=args.out, chains=args.chains, keep_traces=False)
        print(f"{name}: {len(res.configs)} configs in {res.runtime_s:.2f}s -> {res.out_dir}")
        for c in res.configs:
            beta_hat = "n/a" if c.beta_hat is None else f"{c.beta_hat:.3f}"
            print(f"  {c.config_id:<48} D(T)={c.mean_final:8.3f}  upper={c.envelope.upper[-1]:8.3f}  "
                  f"beta_hat={beta_hat}  violations={c.violation_rate:.3f}")
        for f in res.failures:
            print(f"  FAILED {f['config_id']} at step {f['step']}: {f['error']}")


if __name__ == "__main__":
    main()
