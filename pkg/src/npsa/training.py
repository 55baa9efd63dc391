"""Adam, the training loop, checkpoints and the log-likelihood evaluation protocol."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from npsa import models
from npsa import tensor as T
from npsa.datagen import task_seed
from npsa.distributions import gaussian_log_likelihood_np
from npsa.models import ModelConfig

CHECKPOINT_FORMAT = 1
LOG_HEADER = ("step", "total", "recon", "kl_z", "kl_w")


class ConfigMismatch(ValueError):
    pass


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params: dict, grads: dict):
    """In-place Adam update with bias correction and decoupled weight decay."""
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise T.NumericError(f"non-finite gradient at step {state.step} in {', '.join(sorted(bad))}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise T.DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - state.lr * update
    return params


def clip_by_global_norm(grads: dict, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


# ----------------------------------------------------------------- training


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 1
    eval_every: int = 0
    seed: int = 0
    lr: float = 1e-3
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.eval_every < 0 or not self.lr > 0:
            raise ValueError("eval_every must be >= 0 and lr > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict
    adam: AdamState
    step: int
    train: TrainConfig | None = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    seconds: float


def step_rng(seed, step, slot):
    """Noise generator for one (step, batch slot); independent of task sampling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), int(slot), 1]))


def batch_loss(params, cfg: ModelConfig, source, tcfg: TrainConfig, step):
    """Mean objective over the step's batch plus the averaged components."""
    totals = []
    parts = np.zeros(3)
    for b in range(tcfg.batch_size):
        task = source.sample(task_seed(tcfg.seed, step * tcfg.batch_size + b))
        noise = models.training_noise(cfg, task, step_rng(tcfg.seed, step, b))
        lb = models.loss(params, cfg, task, noise)
        totals.append(lb.total)
        parts += (lb.recon, lb.kl_z_term, lb.kl_w_term)
    total = totals[0]
    for t in totals[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / tcfg.batch_size), parts / tcfg.batch_size


def log_row(step, parts):
    recon, kz, kw = (float(v) for v in parts)
    return (step, recon + kz + kw, recon, kz, kw)


def format_log_row(row):
    return ",".join([str(row[0])] + [repr(float(v)) for v in row[1:]])


def write_log(path, rows, append=False):
    with open(path, "a" if append else "w") as fh:
        if not append:
            fh.write(",".join(LOG_HEADER) + "\n")
        for row in rows:
            fh.write(format_log_row(row) + "\n")


def read_log(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(int(r["step"]), float(r["total"]), float(r["recon"]), float(r["kl_z"]),
                 float(r["kl_w"])) for r in reader]


def train(cfg: ModelConfig, source, tcfg: TrainConfig, params=None, resume: Checkpoint | None = None,
          out_dir=None, progress=None):
    """Run (or continue) optimization up to ``tcfg.steps`` total steps.

    The task for (step, slot) and its noise depend only on ``tcfg.seed`` and
    the indices, so resuming from a checkpoint replays the same trajectory.
    """
    start = time.perf_counter()
    if resume is not None:
        if resume.model.to_dict() != cfg.to_dict():
            raise ConfigMismatch("checkpoint model config differs from the requested config")
        params, adam, step0 = resume.params, resume.adam, resume.step
    else:
        params = params if params is not None else models.init_params(cfg, tcfg.seed)
        adam = AdamState(lr=tcfg.lr, weight_decay=cfg.weight_decay)
        step0 = 0
    log_path = ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "loss_log.csv")
        ckpt_path = os.path.join(out_dir, "checkpoint.npz")
        if resume is None or not os.path.exists(log_path):
            write_log(log_path, [])
    rows = []
    pending = []
    for step in range(step0, tcfg.steps):
        for p in params.values():
            p.zero_grad()
        total, parts = batch_loss(params, cfg, source, tcfg, step)
        if not np.isfinite(total.data):
            raise T.NumericError(f"non-finite loss at step {step}")
        total.backward()
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
        grads, _ = clip_by_global_norm(grads, tcfg.clip_norm)
        adam_step(adam, params, grads)
        row = log_row(step, parts)
        rows.append(row)
        pending.append(row)
        done = step + 1
        if progress is not None:
            progress(row)
        at_eval = tcfg.eval_every and done % tcfg.eval_every == 0
        if out_dir is not None and (at_eval or done == tcfg.steps):
            write_log(log_path, pending, append=True)
            pending = []
            save_checkpoint(ckpt_path, Checkpoint(cfg, params, adam, done, tcfg))
    ckpt = Checkpoint(cfg, params, adam, max(step0, tcfg.steps), tcfg)
    return TrainResult(ckpt, rows, time.perf_counter() - start)


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, ckpt: Checkpoint):
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "model": np.array(json.dumps(ckpt.model.to_dict(), sort_keys=True)),
        "train": np.array(json.dumps(ckpt.train.to_dict() if ckpt.train else None)),
        "step": np.array(ckpt.step),
        "adam": np.array(json.dumps({k: getattr(ckpt.adam, k)
                                     for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")})),
    }
    for name, p in ckpt.params.items():
        arrays[f"p/{name}"] = p.data
    for name, m in ckpt.adam.m.items():
        arrays[f"m/{name}"] = m
        arrays[f"v/{name}"] = ckpt.adam.v[name]
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        fmt = int(z["format"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt}")
        model = ModelConfig.from_dict(json.loads(str(z["model"])))
        train_d = json.loads(str(z["train"]))
        adam = AdamState(**json.loads(str(z["adam"])))
        params, m, v = {}, {}, {}
        for key in z.files:
            kind, _, name = key.partition("/")
            if kind == "p":
                params[name] = T.Tensor(z[key].copy(), requires_grad=True, name=name)
            elif kind == "m":
                m[name] = z[key].copy()
            elif kind == "v":
                v[name] = z[key].copy()
        adam.m, adam.v = m, v
        return Checkpoint(model, params, adam, int(z["step"]),
                          TrainConfig.from_dict(train_d) if train_d else None)


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    kernel: str
    context_ll: float
    target_ll: float
    stderr: dict
    n_tasks: int
    per_task: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {"kernel": self.kernel, "context_ll": self.context_ll, "target_ll": self.target_ll,
                "stderr": self.stderr, "n_tasks": self.n_tasks}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def task_log_likelihoods(params, cfg, task, seed, deterministic=False):
    """(context ll, target ll): per-point means, summed over output dims."""
    mu, sigma = models.predict(params, cfg, task, seed=seed, deterministic=deterministic)
    ll = gaussian_log_likelihood_np(np.asarray(task.y_target, dtype=np.float64), mu, sigma)
    return float(ll[: task.n_context].mean()), float(ll.mean())


def evaluate(params, cfg: ModelConfig, source, n_tasks, seed, deterministic=False, kernel=None,
             predictor=None):
    """Mean context / target log-likelihood over ``n_tasks`` held-out tasks.

    One Monte-Carlo draw per task. ``predictor(task) -> (mu, sigma)`` replaces
    the model when given.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    vals = np.empty((n_tasks, 2))
    for i in range(n_tasks):
        task = source.sample(task_seed(seed, i))
        if predictor is None:
            vals[i] = task_log_likelihoods(params, cfg, task, task_seed(seed + 1, i), deterministic)
        else:
            mu, sigma = predictor(task)
            ll = gaussian_log_likelihood_np(task.y_target, mu, sigma)
            vals[i] = ll[: task.n_context].mean(), ll.mean()
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n_tasks) if n_tasks > 1 else np.zeros(2)
    if not np.all(np.isfinite(mean)):
        raise T.NumericError("evaluation produced non-finite log-likelihoods")
    return EvalReport(kernel=kernel or getattr(source, "name", "?"), context_ll=float(mean[0]),
                      target_ll=float(mean[1]),
                      stderr={"context_ll": float(se[0]), "target_ll": float(se[1])},
                      n_tasks=n_tasks, per_task=vals)


def evaluate_checkpoint(ckpt: Checkpoint, source, n_tasks, seed, expected_family=None, **kw):
    if expected_family is not None and ckpt.model.family != expected_family:
        raise ConfigMismatch(f"checkpoint holds a {ckpt.model.family} model, expected {expected_family}")
    if getattr(source, "d_y", ckpt.model.d_y) != ckpt.model.d_y:
        raise ConfigMismatch("task source output dimension differs from the checkpoint model")
    return evaluate(ckpt.params, ckpt.model, source, n_tasks, seed, **kw)
