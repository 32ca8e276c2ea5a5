"""Monte Carlo check of the concentration bound on score-mode chains.

For each horizon, simulate many chains and report the fraction whose final
cumulative distortion exceeds the mean by more than the Azuma deviation.

    python3 scripts/deviation_montecarlo.py --chains 10000 --beta 0.7
"""

import argparse

import numpy as np

from mcp_fidelity.bounds import DependencyParams, azuma_deviation, gamma_hat, gamma_star
from mcp_fidelity.chain import ChainConfig, run_chains


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=10_000)
    ap.add_argument("--beta", type=float, default=0.7)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--base-rate", type=float, default=0.5)
    ap.add_argument("--eta", type=float, default=0.05)
    ap.add_argument("--horizons", type=int, nargs="*", default=[10, 30, 60])
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    params = DependencyParams(alpha=1.0, beta=args.beta)
    print(f"{'T':>4} {'mean':>9} {'std':>7} {'dev(g*)':>8} {'tail(g*)':>9} {'dev(g^)':>8} {'tail(g^)':>9}")
    for T in args.horizons:
        cfg = ChainConfig(T=T, beta=args.beta, noise_sigma=args.sigma, base_rate=args.base_rate, seed=args.seed)
        final = np.array([tr.cumulative[-1] for tr in run_chains(cfg, args.chains)])
        excess = final - final.mean()
        dev_s = azuma_deviation(T, gamma_star(params), args.eta)
        dev_h = azuma_deviation(T, gamma_hat(params, T), args.eta)
        print(f"{T:>4} {final.mean():9.3f} {final.std(ddof=1):7.3f} {dev_s:8.2f} {np.mean(excess >= dev_s):9.4f} "
              f"{dev_h:8.2f} {np.mean(excess >= dev_h):9.4f}")


if __name__ == "__main__":
    main()
