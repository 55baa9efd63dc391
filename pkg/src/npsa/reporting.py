"""Attention heatmaps, diagonal-dominance statistics, prediction curves, and the K sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from npsa import models
from npsa.datagen import Task, make_regression_task, task_seed
from npsa.models import ModelConfig


class UnsupportedFamily(ValueError):
    pass


@dataclass
class HeatmapMatrix:
    context_x: np.ndarray
    target_x: np.ndarray
    W: np.ndarray
    mode: str


@dataclass
class DiagStats:
    diag_mean: float
    diag_var: float
    offdiag_mean: float
    offdiag_var: float

    @property
    def ratio(self):
        return self.diag_mean / self.offdiag_mean if self.offdiag_mean > 0 else float("inf")


def heatmap_task(spec, noise, seed, n_context=10, n_target=50):
    """Display task: ``n_context`` contexts, contexts included among the targets."""
    return make_regression_task(spec, noise, seed, n_context=n_context, n_target=n_target)


def attention_matrix(params, cfg: ModelConfig, task, seed=0):
    """Head-averaged weights [n_target, n_context] from one eval-mode pass, caller order."""
    if not cfg.has_attention:
        raise UnsupportedFamily(f"{cfg.family} has no cross-attention to export")
    rng = np.random.default_rng(seed)
    noise = models.sample_noise(cfg, len(task.x_target), len(task.x_context), rng)
    out = models.forward(params, cfg, task, noise, mode="eval")
    return out.attn.weights_in_caller_order().mean(axis=0)


def build_heatmap(W, x_context, x_target, mode="full"):
    """Sort both axes by feature value; 'simplified' keeps target rows that are context points."""
    if mode not in ("full", "simplified"):
        raise ValueError(f"mode must be 'full' or 'simplified', got {mode!r}")
    xc = np.asarray(x_context, dtype=np.float64).reshape(len(x_context), -1)
    xt = np.asarray(x_target, dtype=np.float64).reshape(len(x_target), -1)
    if xc.shape[1] != 1:
        raise UnsupportedFamily("heatmaps need one-dimensional inputs")
    xc, xt = xc[:, 0], xt[:, 0]
    rows = np.arange(len(xt))
    if mode == "simplified":
        rows = np.array([i for i in rows if np.any(xc == xt[i])], dtype=int)
        # one row per distinct context value
        _, first = np.unique(xt[rows], return_index=True)
        rows = rows[np.sort(first)]
    col_order = np.argsort(xc, kind="stable")
    row_order = rows[np.argsort(xt[rows], kind="stable")]
    return HeatmapMatrix(xc[col_order], xt[row_order], W[np.ix_(row_order, col_order)], mode)


def export_heatmap(params, cfg: ModelConfig, task, mode="full", seed=0, path=None):
    W = attention_matrix(params, cfg, task, seed)
    h = build_heatmap(W, task.x_context, task.x_target, mode)
    if path is not None:
        write_heatmap_csv(path, h)
    return h


def write_heatmap_csv(path, h: HeatmapMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [repr(float(v)) for v in h.context_x])
        for x, row in zip(h.target_x, h.W):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])


def read_heatmap_csv(path, mode="full"):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    context_x = np.array([float(v) for v in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, -1)
    return HeatmapMatrix(context_x, body[:, 0], body[:, 1:], mode)


def diag_stats(h) -> DiagStats:
    W = h.W if isinstance(h, HeatmapMatrix) else np.asarray(h)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"diagonal statistics need a square matrix, got shape {W.shape}")
    return pooled_diag_stats([W])


def pooled_diag_stats(mats) -> DiagStats:
    """Statistics over the diagonal / off-diagonal cells of several square matrices."""
    diag, off = [], []
    for W in mats:
        W = W.W if isinstance(W, HeatmapMatrix) else np.asarray(W)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"diagonal statistics need square matrices, got shape {W.shape}")
        mask = np.eye(len(W), dtype=bool)
        diag.append(W[mask])
        off.append(W[~mask])
    diag = np.concatenate(diag)
    off = np.concatenate(off)
    off_mean = float(off.mean()) if off.size else 0.0
    off_var = float(off.var()) if off.size else 0.0
    return DiagStats(float(diag.mean()), float(diag.var()), off_mean, off_var)


def heatmap_diag_stats(params, cfg, spec, noise=None, n_tasks=20, seed=0, n_context=10, n_target=50):
    mats = []
    for i in range(n_tasks):
        task = heatmap_task(spec, noise, task_seed(seed, i), n_context, n_target)
        mats.append(export_heatmap(params, cfg, task, "simplified", seed=task_seed(seed + 1, i)))
    return pooled_diag_stats(mats)


# -------------------------------------------------------------- predictions


def export_predictions(params, cfg: ModelConfig, task, grid, seed=0, path=None):
    """Predictions over ``grid`` plus every context x; returns the CSV rows."""
    if cfg.d_x != 1:
        raise UnsupportedFamily("prediction curves need d_x == 1")
    xc = np.asarray(task.x_context, dtype=np.float64).reshape(-1)
    xs = np.unique(np.concatenate([np.asarray(grid, dtype=np.float64).reshape(-1), xc]))
    query = Task(task.x_context, task.y_context, xs[:, None], np.zeros((len(xs), cfg.d_y)))
    mu, sigma = models.predict(params, cfg, query, seed=seed)
    ctx = set(xc.tolist())
    if cfg.d_y == 1:
        header = ["role", "x", "mu", "sigma"]
    else:
        header = ["role", "x"] + [f"mu{i}" for i in range(cfg.d_y)] + [f"sigma{i}" for i in range(cfg.d_y)]
    rows = [header]
    for x, m, s in zip(xs, mu, sigma):
        role = "context" if x in ctx else "grid"
        rows.append([role, repr(float(x))] + [repr(float(v)) for v in m] + [repr(float(v)) for v in s])
    if path is not None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return rows


# ----------------------------------------------------------------- K sweep

SWEEP_HEADER = ("K", "regularized", "converged", "final_loss", "context_ll", "target_ll",
                "diag_mean", "diag_var", "offdiag_mean", "offdiag_var")


def convergence(totals, steps=None, threshold=0.5):
    """(converged, final window mean): final window must sit ``threshold`` nats below the first."""
    totals = np.asarray(totals, dtype=np.float64)
    steps = len(totals) if steps is None else steps
    win = max(1, min(1000, steps // 4))
    first, last = float(totals[:win].mean()), float(totals[-win:].mean())
    return bool(last < first - threshold), last


def sweep_k(base: ModelConfig, k_list, run, evaluate_run, heatmap_stats, arms=(True, False)):
    """One row per (K, regularizer arm).

    ``run(cfg) -> (params, loss totals)`` trains one arm;
    ``evaluate_run(params, cfg) -> (context_ll, target_ll)``;
    ``heatmap_stats(params, cfg) -> DiagStats``.
    """
    if base.family != "NPSA":
        raise UnsupportedFamily("the K sweep applies to the stochastic-attention family only")
    rows = []
    for k in k_list:
        for reg in arms:
            cfg = replace(base, K=float(k), use_attn_kl=bool(reg))
            params, totals = run(cfg)
            converged, final = convergence(totals)
            c_ll, t_ll = evaluate_run(params, cfg)
            ds = heatmap_stats(params, cfg)
            rows.append({"K": float(k), "regularized": bool(reg), "converged": converged,
                         "final_loss": final, "context_ll": c_ll, "target_ll": t_ll,
                         "diag_mean": ds.diag_mean, "diag_var": ds.diag_var,
                         "offdiag_mean": ds.offdiag_mean, "offdiag_var": ds.offdiag_var})
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else str(r[c]).lower()
                        if isinstance(r[c], bool) else r[c] for c in SWEEP_HEADER])
