"""BSS-eval style separation metrics and direction-prediction accuracy.

The estimate is decomposed against the reference set by orthogonal
projection (whole-signal, no distortion filters): the part explained by
the target reference, the extra part explained by the other references
(interference), and the residual outside the reference span (artifacts).
Ratios are reported in dB and capped at +/-300 so perfect or silent
estimates stay numeric in CSV reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

DB_CAP = 300.0
RANK_TOL = 1e-10


@dataclass(frozen=True)
class BssResult:
    """SDR / SIR / SAR in dB for one (estimate, reference) pairing."""

    sdr: float
    sir: float
    sar: float
    estimate_index: int | None = None
    reference_index: int | None = None


def bss_decompose(estimate, references, target_index: int):
    """Split an estimate into target, interference, and artifact components.

    Parameters
    ----------
    estimate : 1-D signal
    references : list of 1-D reference signals, all the same length
    target_index : which reference is the intended source

    Returns
    -------
    (s_target, e_interf, e_artif) with s_target the projection of the
    estimate onto the target reference, e_interf the remainder of its
    projection onto the full reference span, and e_artif the part outside
    that span; the three always sum to the estimate.
    """
    estimate = np.asarray(estimate, dtype=float)
    refs = [np.asarray(r, dtype=float) for r in references]
    if not refs:
        raise ValueError("need at least one reference")
    if not 0 <= target_index < len(refs):
        raise ValueError(f"target index {target_index} out of range")
    for ref in refs:
        if ref.shape != estimate.shape:
            raise ValueError("estimate and references must have equal lengths")
        if np.dot(ref, ref) == 0:
            raise ValueError("zero-norm reference")
    basis = np.stack(refs, axis=1)
    singular = np.linalg.svd(basis, compute_uv=False)
    if singular[-1] < RANK_TOL * singular[0]:
        raise ValueError("rank-deficient reference set")

    gram = basis.T @ basis
    coeffs = np.linalg.solve(gram, basis.T @ estimate)
    proj_all = basis @ coeffs

    target = refs[target_index]
    s_target = (np.dot(estimate, target) / np.dot(target, target)) * target
    return s_target, proj_all - s_target, estimate - proj_all


def _ratio_db(num: float, den: float) -> float:
    if num == 0.0:
        return -DB_CAP
    if den == 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def bss_ratios(s_target, e_interf, e_artif, estimate_index=None, reference_index=None):
    """SDR, SIR, and SAR (dB, capped) from a bss_decompose result."""
    p_target = float(np.dot(s_target, s_target))
    p_interf = float(np.dot(e_interf, e_interf))
    p_artif = float(np.dot(e_artif, e_artif))
    mixed = s_target + e_interf
    return BssResult(
        sdr=_ratio_db(p_target, float(np.dot(e_interf + e_artif, e_interf + e_artif))),
        sir=_ratio_db(p_target, p_interf),
        sar=_ratio_db(float(np.dot(mixed, mixed)), p_artif),
        estimate_index=estimate_index,
        reference_index=reference_index,
    )


def evaluate(estimate, references, target_index: int) -> BssResult:
    """Decompose and score one estimate against one target reference."""
    s_target, e_interf, e_artif = bss_decompose(estimate, references, target_index)
    return bss_ratios(s_target, e_interf, e_artif, reference_index=target_index)


def best_permutation_bss(estimates, references):
    """Score every estimate/reference assignment; keep the one maximizing mean SDR.

    Returns one BssResult per estimate (in estimate order) carrying the
    chosen reference index.
    """
    if len(estimates) != len(references):
        raise ValueError(
            f"{len(estimates)} estimates vs {len(references)} references"
        )
    n = len(estimates)
    table = [[evaluate(est, references, j) for j in range(n)] for est in estimates]
    best_perm = max(
        permutations(range(n)),
        key=lambda perm: np.mean([table[i][perm[i]].sdr for i in range(n)]),
    )
    return [
        BssResult(
            sdr=table[i][best_perm[i]].sdr,
            sir=table[i][best_perm[i]].sir,
            sar=table[i][best_perm[i]].sar,
            estimate_index=i,
            reference_index=best_perm[i],
        )
        for i in range(n)
    ]


def direction_accuracy(predictions, labels) -> float:
    """Percentage of predicted direction classes matching the labels."""
    predictions = list(predictions)
    labels = list(labels)
    if not predictions or len(predictions) != len(labels):
        raise ValueError(
            f"need equal nonempty prediction/label lists, got {len(predictions)} "
            f"and {len(labels)}"
        )
    hits = sum(1 for p, t in zip(predictions, labels) if p == t)
    return 100.0 * hits / len(labels)


def majority_vote_accuracy(labels) -> float:
    """Accuracy of always predicting the modal label (ties: smallest id)."""
    labels = list(labels)
    if not labels:
        raise ValueError("majority vote needs at least one label")
    values, counts = np.unique(labels, return_counts=True)
    mode = values[counts.argmax()]
    return direction_accuracy([mode] * len(labels), labels)
