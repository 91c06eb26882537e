"""Template null distributions of the naive slope.

Pseudo-subjects are drawn under the test design from posterior parameter
draws, one pseudo-subject per draw, and summarized by the naive slope.  The
template keeps the raw values; every downstream quantity is an empirical
tail fraction of them.
"""
from __future__ import annotations

import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _rng
from .data import DesignSpec, ModelParams, ValidationError, _kg
from .estimator import pair_coefficients
from .gibbs import PosteriorDraws

__all__ = [
    "FORMAT_VERSION",
    "MIN_DECISION_DRAWS",
    "TemplateDistribution",
    "draw_pseudo_subject",
    "draw_pseudo_subjects",
    "build_template",
    "shift_template",
    "critical_value",
    "save_template",
    "load_template",
]

FORMAT_VERSION = 1
MIN_DECISION_DRAWS = 1000
# Pseudo-subject index m draws from stream (seed, TEMPLATE, m // _BLOCK).
_BLOCK = 500


@dataclass(frozen=True, eq=False)
class TemplateDistribution:
    values: np.ndarray
    design: DesignSpec
    benchmark_slope: float
    shift: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError("template values must be a nonempty 1-d array")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("template values must be finite")

    @cached_property
    def sorted_values(self) -> np.ndarray:
        s = np.sort(self.values)
        s.setflags(write=False)
        return s

    @property
    def M(self) -> int:
        return self.values.size

    @property
    def is_null(self) -> bool:
        return self.shift == 0.0

    def __len__(self) -> int:
        return self.M


def draw_pseudo_subjects(a, beta_pop, var_alpha, var_u, var_eps, design: DesignSpec,
                         rng: np.random.Generator) -> np.ndarray:
    """Outcomes of shape (m, conditions, trials), one pseudo-subject per parameter row.

    Sampling the intercept, subject-by-weight and residual effects in turn
    gives exactly the compound-symmetric covariance of the stacked outcomes.
    """
    a, beta_pop, var_alpha, var_u, var_eps = (
        np.atleast_1d(np.asarray(x, dtype=float)) for x in (a, beta_pop, var_alpha, var_u, var_eps)
    )
    m = a.size
    J, T = design.n_conditions, design.trials_per_condition
    w = design.weights_array
    z = rng.standard_normal((m, 1 + J + J * T))
    alpha = np.sqrt(var_alpha) * z[:, 0]
    u = np.sqrt(var_u)[:, None] * z[:, 1:1 + J]
    eps = np.sqrt(var_eps)[:, None, None] * z[:, 1 + J:].reshape(m, J, T)
    mean = a[:, None] + beta_pop[:, None] * w[None, :] + alpha[:, None] + u
    return mean[:, :, None] + eps


def draw_pseudo_subject(theta: ModelParams, design: DesignSpec, rng: np.random.Generator) -> np.ndarray:
    """One pseudo-subject's outcomes, shape (conditions, trials)."""
    return draw_pseudo_subjects(theta.a, theta.beta_pop, theta.var_alpha, theta.var_u,
                                theta.var_eps, design, rng)[0]


def _template_values(params: dict[str, np.ndarray], design: DesignSpec, M: int, seed: int) -> np.ndarray:
    n = params["a"].size
    idx = np.arange(M) % n
    coef = pair_coefficients(design.weights)
    out = np.empty(M)
    for b, block in enumerate(_rng.chunks(M, _BLOCK)):
        sel = idx[block.start:block.stop]
        rng = _rng.stream(seed, _rng.TEMPLATE, b)
        y = draw_pseudo_subjects(params["a"][sel], params["beta_pop"][sel], params["var_alpha"][sel],
                                 params["var_u"][sel], params["var_eps"][sel], design, rng)
        out[block.start:block.stop] = y.mean(axis=2) @ coef
    return out


def _utc_stamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_template(post: PosteriorDraws, design: DesignSpec, M: int | None = None,
                   seed: int | None = None, benchmark: str | None = None) -> TemplateDistribution:
    """Null template of ``M`` naive slopes under ``design``.

    Posterior draws are used in order and recycled when ``M`` exceeds their
    number; recycling is recorded in the provenance.  ``benchmark`` picks the
    posterior mean (default) or median of the slope as the benchmark.
    """
    if len(post) == 0:
        raise ValidationError("posterior has no draws")
    run = post.run
    M = run.template_draws if M is None else int(M)
    if M < 1:
        raise ValidationError("template size M must be at least 1")
    seed = run.seed if seed is None else int(seed)
    benchmark = benchmark or run.benchmark
    params = post.param_arrays()
    values = _template_values(params, design, M, seed)
    beta = params["beta_pop"]
    bench = float(np.median(beta) if benchmark == "median" else beta.mean())
    provenance = {
        "seed": seed,
        "chains": run.chains,
        "draws_per_chain": run.draws_per_chain,
        "burn_in": run.burn_in,
        "rhat": {k: float(v) for k, v in post.rhat.items()},
        "converged": bool(post.converged),
        "posterior_draws": len(post),
        "recycled": M > len(post),
        "benchmark": benchmark,
        "priors": {"eta": post.priors.eta, "nu": post.priors.nu,
                   "eta_u": post.priors.eta_u, "nu_u": post.priors.nu_u},
        "created_utc": _utc_stamp(),
    }
    if M < MIN_DECISION_DRAWS:
        warnings.warn(f"template has only {M} values; at least {MIN_DECISION_DRAWS} are advised "
                      "for clinical decisions", stacklevel=2)
    return TemplateDistribution(values, design, bench, 0.0, provenance)


def shift_template(t: TemplateDistribution, delta_alt: float) -> TemplateDistribution:
    """Alternative template for slope deficit ``delta_alt`` (values move down)."""
    if not t.is_null:
        raise ValidationError("template is already shifted; shift the null template instead")
    return replace(t, values=t.values - float(delta_alt), shift=float(delta_alt))


def critical_value(t: TemplateDistribution, level: float) -> float:
    """Lower empirical quantile: the k-th smallest value with ``k = ceil(level * M)``."""
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    k = min(max(math.ceil(level * t.M - 1e-9), 1), t.M)
    return float(t.sorted_values[k - 1])


def save_template(t: TemplateDistribution, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "design": {"weights_g": t.design.weights_grams, "trials": t.design.trials_per_condition},
        "benchmark_slope": t.benchmark_slope,
        "shift": t.shift,
        "values": [float(v) for v in t.values],
        "provenance": t.provenance,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def load_template(path: str | Path) -> TemplateDistribution:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read template {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported template format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        design = DesignSpec(tuple(_kg(g) for g in doc["design"]["weights_g"]), int(doc["design"]["trials"]))
        return TemplateDistribution(np.array(doc["values"], dtype=float), design,
                                    float(doc["benchmark_slope"]), float(doc.get("shift", 0.0)),
                                    dict(doc.get("provenance", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed template {path}: {exc}") from exc
