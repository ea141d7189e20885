"""Causal structure learning over evaluation run metrics.

Learns a weighted DAG by continuous optimization: minimize the least-squares
reconstruction loss plus an L1 penalty subject to the smooth acyclicity
constraint h(W) = trace(exp(W∘W)) - d = 0, solved with an augmented
Lagrangian outer loop and L-BFGS-B inner steps. Designated treatment columns
get their in-edges pinned to exactly zero (treatments are exogenous
interventions). Downstream, intervention effects are total path-product
sums, exported as a heatmap (CSV + figure) of treatments × outcomes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as slin
import scipy.optimize as sopt

from .errors import NonSquareError, UnknownNodeError
from .textstats import text_metrics

logger = logging.getLogger(__name__)

TREATMENT_FIELDS = ("backend", "condition", "benchmark")
OUTCOME_FIELDS = ("accuracy", "ttr", "noun_ratio", "flesch_kincaid", "smog",
                  "char_count", "word_count", "token_count")


@dataclass
class NotearsParams:
    l1_penalty: float = 0.1
    edge_threshold: float = 0.3
    max_iterations: int = 100
    h_tolerance: float = 1e-8
    rho_max: float = 1e16


@dataclass
class CausalGraph:
    weights: np.ndarray          # weights[j, i] = weight of edge j -> i
    nodes: list[str]
    blocked: np.ndarray          # blocked[j, i] True => edge j -> i forbidden
    converged: bool = True

    def index_of(self, node: str) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise UnknownNodeError(node) from None

    def edges(self) -> list[tuple[str, str, float]]:
        out = []
        d = len(self.nodes)
        for j in range(d):
            for i in range(d):
                w = self.weights[j, i]
                if w != 0.0:
                    out.append((self.nodes[j], self.nodes[i], float(w)))
        return out


def acyclicity(W: np.ndarray) -> float:
    """h(W) = trace(exp(W∘W)) - d; zero iff the support is acyclic."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise NonSquareError(f"matrix shape {W.shape}")
    E = slin.expm(W * W)
    return float(np.trace(E) - W.shape[0])


def acyclicity_with_grad(W: np.ndarray) -> tuple[float, np.ndarray]:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise NonSquareError(f"matrix shape {W.shape}")
    E = slin.expm(W * W)
    h = float(np.trace(E) - W.shape[0])
    return h, E.T * W * 2.0


def reconstruction_loss(X: np.ndarray, W: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/2n)·‖X - XW‖²_F and its gradient in W."""
    n = X.shape[0]
    R = X - X @ W
    loss = 0.5 / n * float((R ** 2).sum())
    grad = -1.0 / n * X.T @ R
    return loss, grad


def fit_notears(X: np.ndarray, nodes: Optional[Sequence[str]] = None,
                params: Optional[NotearsParams] = None,
                blocked: Optional[np.ndarray] = None) -> CausalGraph:
    """Learn a weighted DAG from samples X (n × d).

    Blocked entries (and the diagonal) are held at exactly zero via box
    bounds on the doubled-variable parameterization W = W+ - W-. If the dual
    loop exhausts its iterations with h above tolerance, the best iterate is
    returned flagged ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2 or d < 2:
        raise ValueError(f"need n >= 2 rows and d >= 2 columns, got {X.shape}")
    params = params or NotearsParams()
    if blocked is None:
        blocked = np.zeros((d, d), dtype=bool)
    blocked = np.asarray(blocked, dtype=bool)
    if blocked.shape != (d, d):
        raise ValueError("blocked mask shape must match column count")
    node_names = list(nodes) if nodes is not None else [f"x{i}" for i in range(d)]

    X = X - X.mean(axis=0, keepdims=True)

    def _adj(w: np.ndarray) -> np.ndarray:
        return (w[:d * d] - w[d * d:]).reshape(d, d)

    def _func(w: np.ndarray):
        W = _adj(w)
        loss, g_loss = reconstruction_loss(X, W)
        h, g_h = acyclicity_with_grad(W)
        obj = loss + 0.5 * rho * h * h + alpha * h + params.l1_penalty * w.sum()
        g_smooth = g_loss + (rho * h + alpha) * g_h
        grad = np.concatenate((g_smooth + params.l1_penalty,
                               -g_smooth + params.l1_penalty), axis=None)
        return obj, grad

    fixed = blocked | np.eye(d, dtype=bool)
    bounds = [(0, 0) if fixed[j, i] else (0, None)
              for _ in range(2) for j in range(d) for i in range(d)]

    w_est = np.zeros(2 * d * d)
    rho, alpha, h = 1.0, 0.0, np.inf
    for _ in range(params.max_iterations):
        w_new, h_new = None, None
        while rho < params.rho_max:
            sol = sopt.minimize(_func, w_est, method="L-BFGS-B", jac=True,
                                bounds=bounds)
            w_new = sol.x
            h_new = acyclicity(_adj(w_new))
            if h_new > 0.25 * h:
                rho *= 10
            else:
                break
        w_est, h = w_new, h_new
        alpha += rho * h
        if h <= params.h_tolerance or rho >= params.rho_max:
            break

    W = _adj(w_est)
    W[np.abs(W) < params.edge_threshold] = 0.0
    W[fixed] = 0.0
    converged = h <= params.h_tolerance and acyclicity(W) <= params.h_tolerance
    if not converged:
        logger.warning("dual loop ended with h=%.3g; returning best iterate", h)
    return CausalGraph(weights=W, nodes=node_names, blocked=blocked,
                       converged=converged)


def intervention_effect(graph: CausalGraph, treatment: str, outcome: str) -> float:
    """Total linear effect of a unit intervention: sum of path products.

    Equals the (treatment, outcome) entry of sum_k W^k, which terminates
    because a DAG's weight matrix is nilpotent.
    """
    t = graph.index_of(treatment)
    o = graph.index_of(outcome)
    d = len(graph.nodes)
    total = np.zeros_like(graph.weights)
    power = np.eye(d)
    for _ in range(d):
        power = power @ graph.weights
        if not power.any():
            break
        total += power
    return float(total[t, o])


def effects_heatmap(graph: CausalGraph, treatments: Sequence[str],
                    outcomes: Sequence[str]) -> np.ndarray:
    """Matrix of intervention effects: rows treatments, columns outcomes."""
    if set(treatments) & set(outcomes):
        raise ValueError("treatment and outcome node lists must be disjoint")
    matrix = np.zeros((len(treatments), len(outcomes)))
    for r, t in enumerate(treatments):
        for c, o in enumerate(outcomes):
            matrix[r, c] = intervention_effect(graph, t, o)
    return matrix


def save_heatmap_csv(matrix: np.ndarray, treatments: Sequence[str],
                     outcomes: Sequence[str], path) -> Path:
    import pandas as pd

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(matrix, index=list(treatments), columns=list(outcomes))
    frame.to_csv(path, index_label="treatment")
    return path


def load_heatmap_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    import pandas as pd

    frame = pd.read_csv(path, index_col="treatment")
    return frame.to_numpy(), list(frame.index), list(frame.columns)


def save_heatmap_figure(matrix: np.ndarray, treatments: Sequence[str],
                        outcomes: Sequence[str], path) -> Path:
    """Diverging heatmap: positive effects blue, negative red."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    span = max(float(np.abs(matrix).max()), 1e-9)
    fig, ax = plt.subplots(
        figsize=(1.2 + 0.9 * len(outcomes), 1.2 + 0.6 * len(treatments)))
    im = ax.imshow(matrix, cmap="RdBu", vmin=-span, vmax=span, aspect="auto")
    ax.set_xticks(range(len(outcomes)), labels=outcomes, rotation=35,
                  ha="right", fontsize=8)
    ax.set_yticks(range(len(treatments)), labels=treatments, fontsize=8)
    for r in range(matrix.shape[0]):
        for c in range(matrix.shape[1]):
            ax.text(c, r, f"{matrix[r, c]:+.2f}", ha="center", va="center",
                    fontsize=7)
    fig.colorbar(im, ax=ax, label="intervention effect")
    ax.set_title("Intervention effects")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


# --- run-metric table preparation ---

@dataclass
class MetricTable:
    columns: list[str]
    data: np.ndarray                      # standardized, rows = runs
    treatment_columns: list[str] = field(default_factory=list)

    def blocked_mask(self) -> np.ndarray:
        d = len(self.columns)
        blocked = np.zeros((d, d), dtype=bool)
        for name in self.treatment_columns:
            blocked[:, self.columns.index(name)] = True
        return blocked


def build_metric_table(rows: Sequence[dict],
                       treatments: Sequence[str] = TREATMENT_FIELDS) -> MetricTable:
    """Aggregate per-item eval records into one standardized run table.

    Rows group by their treatment values; each group becomes one run with
    mean outcome metrics. Categorical treatments are one-hot encoded with
    the first level dropped, then every column is standardized to zero mean
    and unit variance (constant columns become zeros).
    """
    import pandas as pd

    if not rows:
        raise ValueError("no rows")
    enriched = []
    for row in rows:
        rec = dict(row)
        metrics = text_metrics(rec.get("answer_text", "") or "")
        rec.update(metrics)
        rec["accuracy"] = 1.0 if rec.get("correct") else 0.0
        enriched.append(rec)
    frame = pd.DataFrame(enriched)
    missing = [t for t in treatments if t not in frame.columns]
    if missing:
        raise ValueError(f"rows lack treatment fields: {missing}")
    grouped = frame.groupby(list(treatments), as_index=False)[
        list(OUTCOME_FIELDS)].mean()

    onehot = pd.get_dummies(grouped[list(treatments)], prefix=list(treatments),
                            prefix_sep="=", drop_first=True, dtype=float)
    table = pd.concat([onehot, grouped[list(OUTCOME_FIELDS)]], axis=1)

    data = table.to_numpy(dtype=float)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std[std == 0.0] = 1.0
    data = (data - mean) / std
    return MetricTable(columns=list(table.columns), data=data,
                       treatment_columns=list(onehot.columns))


def fit_metric_table(table: MetricTable,
                     params: Optional[NotearsParams] = None) -> CausalGraph:
    return fit_notears(table.data, nodes=table.columns, params=params,
                       blocked=table.blocked_mask())
