"""Training losses: embedding orthogonality, permutation-matched cross-entropies,
mask cyclic consistency, and the weighted total, plus a finite-difference checker.

Separated sources come out of the recurrence in no particular order, so
the two cross-entropy losses minimize over all assignments of predicted
rows to ground-truth labels; with at most three rows per video the
exhaustive scan over permutations is cheap.  Log probabilities are
floored at 1e-12 so every loss stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

LOG_FLOOR = 1e-12
EMBED_NORM_TOL = 1e-6
ROW_SUM_TOL = 1e-9

# Loss weights used throughout: l1 consistency, l2 cyclic, l3 orthogonality,
# l4 direction prediction.
DEFAULT_WEIGHTS = (0.05, 1.0, 1.0, 0.05)


@dataclass(frozen=True)
class LossWeights:
    l1: float = DEFAULT_WEIGHTS[0]
    l2: float = DEFAULT_WEIGHTS[1]
    l3: float = DEFAULT_WEIGHTS[2]
    l4: float = DEFAULT_WEIGHTS[3]

    def __post_init__(self):
        values = (self.l1, self.l2, self.l3, self.l4)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError(f"loss weights must be finite and nonnegative: {values}")


@dataclass(frozen=True)
class LossComponents:
    cons: float = 0.0
    cyc: float = 0.0
    ortho: float = 0.0
    dirpred: float = 0.0


def _as_embedding_matrix(embeddings, validate: bool):
    y = np.asarray(embeddings, dtype=float)
    if y.ndim != 2:
        raise ValueError(f"embeddings must be a (n, d) matrix, got shape {y.shape}")
    if y.shape[0] < 2:
        raise ValueError("need at least 2 embeddings")
    if validate:
        norms = np.linalg.norm(y, axis=1)
        if np.abs(norms - 1.0).max() > EMBED_NORM_TOL:
            raise ValueError(f"embeddings are not unit-normalized: norms {norms}")
    return y


def ortho_loss(embeddings, validate: bool = True) -> float:
    """Sum over ordered pairs i != j of the squared dot product of unit embeddings.

    Zero iff the embeddings are pairwise orthogonal; an identical unit
    pair contributes 2.0 (once per ordered pair).  Pass validate=False to
    skip the unit-norm check, e.g. when probing with finite differences.
    """
    y = _as_embedding_matrix(embeddings, validate)
    gram = y @ y.T
    off = gram - np.diag(np.diag(gram))
    return float((off**2).sum())


def ortho_loss_grad(embeddings, validate: bool = True) -> np.ndarray:
    """Analytic gradient of ortho_loss: dL/dy_i = 4 * sum_{j != i} (y_i . y_j) y_j."""
    y = _as_embedding_matrix(embeddings, validate)
    gram = y @ y.T
    off = gram - np.diag(np.diag(gram))
    return 4.0 * off @ y


def _check_prob_table(table, num_classes=None):
    table = np.asarray(table, dtype=float)
    if table.ndim != 2:
        raise ValueError(f"probability table must be 2-D, got shape {table.shape}")
    if num_classes is not None and table.shape[1] != num_classes:
        raise ValueError(f"table has {table.shape[1]} classes, expected {num_classes}")
    if table.min() < 0:
        raise ValueError("probability table has negative entries")
    sums = table.sum(axis=1)
    if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
        raise ValueError(f"probability rows must sum to 1, got sums {sums}")
    return table


def _perm_min_ce(log_probs: np.ndarray, labels) -> float:
    """Min over assignments of rows to labels of the summed cross-entropy."""
    n = log_probs.shape[0]
    labels = list(labels)
    if len(labels) != n:
        raise ValueError(f"{n} rows but {len(labels)} labels")
    if any(not 0 <= c < log_probs.shape[1] for c in labels):
        raise ValueError(f"label out of range for {log_probs.shape[1]} classes: {labels}")
    return min(
        -sum(log_probs[i, labels[perm[i]]] for i in range(n))
        for perm in permutations(range(n))
    )


def consistency_loss(prob_tables, label_lists) -> float:
    """Permutation-matched cross-entropy of sound-class predictions, summed over videos.

    prob_tables holds one (n_u, K) row-stochastic table per video (rows =
    separated sources) and label_lists the corresponding ground-truth
    class ids; each video picks the label assignment with minimum loss.
    """
    if len(prob_tables) != len(label_lists):
        raise ValueError("need one label list per probability table")
    total = 0.0
    for table, labels in zip(prob_tables, label_lists):
        table = _check_prob_table(table)
        total += _perm_min_ce(np.log(np.maximum(table, LOG_FLOOR)), labels)
    return float(total)


def cyclic_loss(masks_per_video, ibm_per_video) -> float:
    """L1 distance between each video's summed predicted masks and its binary mask."""
    if len(masks_per_video) != len(ibm_per_video):
        raise ValueError("need one mask list per ideal binary mask")
    total = 0.0
    for masks, reference in zip(masks_per_video, ibm_per_video):
        reference = np.asarray(reference, dtype=float)
        summed = np.zeros_like(reference)
        for mask in masks:
            mask = np.asarray(mask, dtype=float)
            if mask.shape != reference.shape:
                raise ValueError(
                    f"mask shape {mask.shape} does not match reference {reference.shape}"
                )
            summed = summed + mask
        total += np.abs(summed - reference).sum()
    return float(total)


def dirpred_loss(
    prob_tables, label_lists, num_classes: int, shared_permutation: bool = False
) -> float:
    """Permutation-matched direction cross-entropy, summed over videos and windows.

    prob_tables[u][w] is an (n_u, num_classes) table and label_lists[u][w]
    the matching label list.  The assignment is chosen independently per
    (video, window); shared_permutation=True instead picks one assignment
    per video minimizing the summed loss over its windows.
    """
    if num_classes not in (10, 28):
        raise ValueError(f"direction class count must be 10 or 28, got {num_classes}")
    if len(prob_tables) != len(label_lists):
        raise ValueError("need one label structure per probability structure")
    total = 0.0
    for tables, labels in zip(prob_tables, label_lists):
        if len(tables) != len(labels):
            raise ValueError("window counts differ between tables and labels")
        logs = [
            np.log(np.maximum(_check_prob_table(t, num_classes), LOG_FLOOR))
            for t in tables
        ]
        if shared_permutation:
            n = logs[0].shape[0]
            total += min(
                sum(
                    -sum(lp[i, lab[perm[i]]] for i in range(n))
                    for lp, lab in zip(logs, labels)
                )
                for perm in permutations(range(n))
            )
        else:
            total += sum(_perm_min_ce(lp, lab) for lp, lab in zip(logs, labels))
    return float(total)


def total_loss(components: LossComponents, weights: LossWeights | None = None) -> float:
    """Weighted sum l1*cons + l2*cyc + l3*ortho + l4*dirpred."""
    w = weights if weights is not None else LossWeights()
    return float(
        w.l1 * components.cons
        + w.l2 * components.cyc
        + w.l3 * components.ortho
        + w.l4 * components.dirpred
    )


def numeric_grad(func, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.copy().reshape(-1)
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + h
        hi = func(xf.reshape(x.shape))
        xf[k] = orig - h
        lo = func(xf.reshape(x.shape))
        xf[k] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"function is non-finite near coordinate {k}")
        flat[k] = (hi - lo) / (2.0 * h)
    return grad
