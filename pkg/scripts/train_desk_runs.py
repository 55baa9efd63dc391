"""Train (or load from cache) every desk-scale run the acceptance gate needs.

Runs are cached under $NPSA_CACHE, so the acceptance tests reuse them.
Usage: python3 scripts/train_desk_runs.py [--seeds 5]
"""

import argparse
import time

from npsa import experiments as X


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    runs = [(f"{fam} seed {s}", X.desk_regression_run(fam, s)) for s in range(args.seeds) for fam in ("ANP", "NPSA")]
    runs += [(f"NPSA K={k} attn_kl={reg}", X.desk_regression_run("NPSA", 0, K=float(k), use_attn_kl=reg))
             for k in (40, 300) for reg in (True, False)]
    runs.append(("sim2real NPSA", X.desk_sim2real_run()))
    for name, run in runs:
        t0 = time.perf_counter()
        X.trained(run)
        print(f"{name}: {X.run_key(run)} {time.perf_counter() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
