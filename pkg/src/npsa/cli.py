"""Command-line entry point: ``npsa {train,eval,simulate-lv,heatmap,sweep-k}``.

Exit codes: 0 success, 2 usage/validation, 3 numeric failure, 4 I/O.
``NP_THREADS`` caps BLAS threads (default 1, for reproducibility).
"""

from __future__ import annotations

import os

_threads = os.environ.get("NP_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402

import numpy as np  # noqa: E402

from npsa import datagen as D  # noqa: E402
from npsa import experiments as X  # noqa: E402
from npsa import reporting as R  # noqa: E402
from npsa import training as TR  # noqa: E402
from npsa.config import ConfigError, dump_run_config, load_run_config  # noqa: E402
from npsa.tensor import NumericError  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text, n=None, name="value"):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _bool(text):
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def cmd_train(args):
    run = load_run_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    dump_run_config(run, os.path.join(args.out, "resolved_config.json"))
    started = time.time()
    result = TR.train(run.model, X.train_source(run), run.train, out_dir=args.out)
    with open(os.path.join(args.out, "run_meta.json"), "w") as fh:
        json.dump({"started": started, "finished": time.time(), "seconds": result.seconds}, fh)
    return EXIT_OK


def cmd_eval(args):
    ckpt = TR.load_checkpoint(args.checkpoint)
    if args.family and ckpt.model.family != args.family:
        raise ConfigError("--family", f"checkpoint holds {ckpt.model.family}, expected {args.family}")
    if args.n_tasks < 1:
        raise UsageError("--n-tasks must be >= 1")
    for kernel in args.kernel.split(","):
        source = X.eval_source(kernel, args.noisy, hare_lynx=args.data)
        try:
            rep = TR.evaluate_checkpoint(ckpt, source, args.n_tasks, args.seed, kernel=kernel,
                                         deterministic=args.deterministic_eval)
        except TR.ConfigMismatch as exc:
            raise ConfigError("--checkpoint", str(exc)) from None
        out = rep.to_dict()
        if args.deterministic_eval:
            out["protocol"] = "deterministic (non-paper)"
        print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_simulate_lv(args):
    theta = _floats(args.theta, 4, "--theta")
    if any(t <= 0 for t in theta):
        raise UsageError("--theta: all rates must be positive")
    init = _floats(args.init, 2, "--init")
    if any(v < 0 or not float(v).is_integer() for v in init):
        raise UsageError("--init: populations must be non-negative integers")
    state = D.LVState(0.0, int(init[0]), int(init[1]))
    grid, xs, ys = D.simulate_lv_series(theta, state, args.t_max, args.n_grid, args.seed,
                                        args.max_events)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "X", "Y"])
        for row in zip(grid, xs, ys):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2])])
    return EXIT_OK


def cmd_heatmap(args):
    ckpt = TR.load_checkpoint(args.checkpoint)
    if ckpt.model.d_x != 1 or ckpt.model.d_y != 1:
        raise ConfigError("--checkpoint", "heatmaps are exported for 1D regression models")
    spec = D.TEST_KERNELS[args.kernel]
    task = R.heatmap_task(spec, D.PERIODIC_NOISE if args.noisy else None, args.task_seed,
                          args.n_context, args.n_target)
    try:
        R.export_heatmap(ckpt.params, ckpt.model, task, args.mode, seed=args.seed, path=args.out)
    except R.UnsupportedFamily as exc:
        raise ConfigError("--checkpoint", str(exc)) from None
    return EXIT_OK


def cmd_sweep_k(args):
    run = load_run_config(args.config)
    if run.model.family != "NPSA":
        raise ConfigError("$.model.family", "sweep-k needs the NPSA family")
    k_list = _floats(args.k_list, name="--k-list")
    if any(k <= 0 for k in k_list):
        raise UsageError("--k-list: K must be positive")
    rows = run_sweep(run, k_list, args.n_heatmap_tasks, cache=args.cache)
    R.write_sweep_csv(args.out, rows)
    return EXIT_OK


def run_sweep(run, k_list, n_heatmap_tasks=20, cache=None, arms=(True, False)):
    from dataclasses import replace

    def train_arm(cfg):
        ckpt, log = X.trained(replace(run, model=cfg), cache=cache)
        return ckpt.params, [row[1] for row in log]

    def eval_arm(params, cfg):
        rep = TR.evaluate(params, cfg, X.eval_source("rbf"), run.eval.n_tasks, run.eval.seed)
        return rep.context_ll, rep.target_ll

    def stats(params, cfg):
        return R.heatmap_diag_stats(params, cfg, D.TEST_KERNELS["rbf"], None, n_heatmap_tasks,
                                    run.eval.seed)

    return R.sweep_k(run.model, k_list, train_arm, eval_arm, stats, arms=arms)


def build_parser():
    p = _Parser(prog="npsa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="log-likelihood evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--kernel", default="rbf",
                   help="comma list of rbf, matern, periodic, lv, hare-lynx")
    e.add_argument("--noisy", type=_bool, default=False)
    e.add_argument("--n-tasks", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--family", choices=("CNP", "NP", "ANP", "NPSA"))
    e.add_argument("--data", help="hare-lynx CSV (year,hare,lynx)")
    e.add_argument("--deterministic-eval", action="store_true",
                   help="use distribution means instead of one sample (not the paper protocol)")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("simulate-lv", help="Gillespie Lotka-Volterra trajectory on the recording grid")
    s.add_argument("--theta", default="0.01,0.5,1,0.01")
    s.add_argument("--init", default="50,100")
    s.add_argument("--t-max", type=float, default=30.0)
    s.add_argument("--n-grid", type=int, default=100)
    s.add_argument("--max-events", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate_lv)

    h = sub.add_parser("heatmap", help="export head-averaged attention weights as CSV")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--task-seed", type=int, required=True)
    h.add_argument("--mode", choices=("full", "simplified"), default="full")
    h.add_argument("--kernel", choices=tuple(D.TEST_KERNELS), default="rbf")
    h.add_argument("--noisy", type=_bool, default=False)
    h.add_argument("--n-context", type=int, default=10)
    h.add_argument("--n-target", type=int, default=50)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", required=True)
    h.set_defaults(fn=cmd_heatmap)

    k = sub.add_parser("sweep-k", help="train K x regularizer arms and tabulate diagnostics")
    k.add_argument("--config", required=True)
    k.add_argument("--k-list", required=True)
    k.add_argument("--n-heatmap-tasks", type=int, default=20)
    k.add_argument("--cache", help="run cache directory (default $NPSA_CACHE)")
    k.add_argument("--out", required=True)
    k.set_defaults(fn=cmd_sweep_k)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError, D.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
