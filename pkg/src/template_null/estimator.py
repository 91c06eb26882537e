"""The clinic-side slope statistic and its bootstrap interval.

The naive slope averages ``(ybar_j - ybar_j') / (w_j - w_j')`` over every
pair of conditions with equal weight.  It is linear in the condition means,
which lets simulation code evaluate it as a dot product with
:func:`pair_coefficients`.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data import Dataset, ValidationError

__all__ = ["NaiveSlope", "naive_slope", "pair_coefficients", "slope_ci"]


@dataclass(frozen=True)
class NaiveSlope:
    value: float
    n_pairs: int
    # (j, j', (ybar_j - ybar_j') / (w_j - w_j')) with j > j', zero-based condition indices.
    per_pair_terms: tuple[tuple[int, int, float], ...]


def _groups(subject_trials: Dataset) -> tuple[np.ndarray, list[np.ndarray]]:
    if len(subject_trials.subject_ids) > 1:
        raise ValidationError(
            f"naive slope is defined for one subject, got {len(subject_trials.subject_ids)}"
        )
    groups = subject_trials.condition_groups()
    if len(groups) < 2:
        raise ValidationError("naive slope needs at least two conditions")
    weights = np.array(list(groups), dtype=float)
    ys = list(groups.values())
    if any(len(y) == 0 for y in ys):
        raise ValidationError("every condition needs at least one trial")
    return weights, ys


def pair_coefficients(weights) -> np.ndarray:
    """Vector ``c`` with ``naive slope == c @ condition_means`` for the given weights."""
    w = np.asarray(weights, dtype=float)
    J = w.size
    if J < 2:
        raise ValidationError("need at least two conditions")
    c = np.zeros(J)
    for j2, j1 in combinations(range(J), 2):
        inv = 1.0 / (w[j1] - w[j2])
        c[j1] += inv
        c[j2] -= inv
    return c / (J * (J - 1) / 2)


def naive_slope(subject_trials: Dataset) -> NaiveSlope:
    """Equally weighted mean of all pairwise slopes between condition means."""
    w, ys = _groups(subject_trials)
    means = np.array([y.mean() for y in ys])
    terms = tuple(
        (j, jp, float((means[j] - means[jp]) / (w[j] - w[jp])))
        for jp, j in combinations(range(len(w)), 2)
    )
    value = float(np.mean([t[2] for t in terms]))
    return NaiveSlope(value, len(terms), terms)


def slope_ci(subject_trials: Dataset, level: float = 0.95, n_boot: int = 2000,
             seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval, resampling trials within each condition."""
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    if n_boot < 100:
        raise ValidationError("n_boot must be at least 100")
    w, ys = _groups(subject_trials)
    if max(len(y) for y in ys) < 2:
        raise ValidationError("bootstrap needs at least two trials in some condition")
    rng = np.random.default_rng(seed)
    means = np.empty((n_boot, len(ys)))
    for j, y in enumerate(ys):
        idx = rng.integers(0, len(y), size=(n_boot, len(y)))
        means[:, j] = y[idx].mean(axis=1)
    slopes = means @ pair_coefficients(w)
    tail = (1 - level) / 2
    lo, hi = np.quantile(slopes, [tail, 1 - tail])
    return float(lo), float(hi)
