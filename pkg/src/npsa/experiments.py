"""Experiment plumbing shared by the CLI, the scripts and the acceptance tests.

Training is a pure function of its configuration, so finished runs are
cached on disk keyed by a hash of (model, train, data) configs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict

import numpy as np

from npsa import datagen as D
from npsa import training as TR
from npsa.config import LVData, RegressionData, RunConfig

CACHE_VERSION = 1
FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "data")


def train_source(run: RunConfig):
    data = run.data
    if isinstance(data, RegressionData):
        return D.RegressionSource(data.train_kernel, data.noise, name="train")
    return D.LVSource(data.theta, data.t_max, data.n_grid, data.pool_size, data.pool_seed)


def eval_source(kernel, noisy=False, data: LVData | None = None, hare_lynx=None):
    if kernel in D.TEST_KERNELS:
        return D.RegressionSource(D.TEST_KERNELS[kernel], D.PERIODIC_NOISE if noisy else None, name=kernel)
    if kernel == "lv":
        data = data or LVData()
        return D.LVSource(data.theta, data.t_max, data.n_grid, data.pool_size,
                          seed=data.pool_seed + 1, name="lv")
    if kernel == "hare-lynx":
        return D.HareLynxSource(hare_lynx or default_hare_lynx_path())
    raise ValueError(f"unknown evaluation kernel {kernel!r}")


def default_hare_lynx_path():
    return os.path.join(FIXTURE_DIR, "hare_lynx_fixture.csv")


def run_key(run: RunConfig):
    payload = {"v": CACHE_VERSION, "experiment": run.experiment, "model": run.model.to_dict(),
               "train": run.train.to_dict(), "data": run.to_dict()["data"]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def cache_dir():
    return os.environ.get("NPSA_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "npsa-runs"))


def trained(run: RunConfig, cache=None, progress=None):
    """(checkpoint, loss-log rows) for ``run``, training only on a cache miss."""
    root = os.path.join(cache or cache_dir(), run_key(run))
    ckpt_path = os.path.join(root, "checkpoint.npz")
    log_path = os.path.join(root, "loss_log.csv")
    if os.path.exists(ckpt_path) and os.path.exists(log_path):
        ckpt = TR.load_checkpoint(ckpt_path)
        if ckpt.step == run.train.steps:
            return ckpt, TR.read_log(log_path)
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "run.json"), "w") as fh:
        json.dump(run.to_dict(), fh, indent=2, sort_keys=True)
    tmp = root + ".partial"
    result = TR.train(run.model, train_source(run), run.train, out_dir=tmp, progress=progress)
    os.replace(os.path.join(tmp, "loss_log.csv"), log_path)
    os.replace(os.path.join(tmp, "checkpoint.npz"), ckpt_path)
    os.rmdir(tmp)
    return result.checkpoint, result.log


def evaluate_kernels(ckpt, kernels, n_tasks, seed, noisy=False, **kw):
    return {k: TR.evaluate(ckpt.params, ckpt.model, eval_source(k, noisy), n_tasks, seed, kernel=k, **kw)
            for k in kernels}


def summarize(values):
    v = np.asarray(values, dtype=np.float64)
    se = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0
    return float(v.mean()), float(se)


def as_json(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    return obj


def desk_regression_run(family, seed, **model_kw):
    """The 20k-step 1D regression run used for the family comparison and K sweep."""
    from npsa.config import EvalConfig
    from npsa.models import ModelConfig

    return RunConfig(
        experiment="regression1d",
        model=ModelConfig(family=family, d_h=64, heads=8, **model_kw),
        train=TR.TrainConfig(steps=20000, batch_size=1, seed=seed),
        data=RegressionData(D.RBF_TRAIN, D.PERIODIC_NOISE),
        eval=EvalConfig(("rbf", "matern", "periodic"), False, 200, 1234),
    )


def desk_sim2real_run(seed=0):
    """10k steps, batch 10, on the Lotka-Volterra simulator."""
    from npsa.config import EvalConfig
    from npsa.models import ModelConfig

    return RunConfig(
        experiment="sim2real",
        model=ModelConfig(family="NPSA", d_y=2, d_h=64, heads=8),
        train=TR.TrainConfig(steps=10000, batch_size=10, seed=seed),
        data=LVData(),
        eval=EvalConfig(("rbf",), False, 200, 1234),
    )
