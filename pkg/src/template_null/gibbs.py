"""Conjugate Gibbs sampler for the random-intercept / subject-by-weight model.

The model for trial ``t`` of subject ``i`` at weight ``w_j`` is::

    y_ijt = a + alpha_i + (beta - delta * new_i) * w_j + u_ij + eps_ijt
    alpha_i ~ N(0, var_alpha),  u_ij ~ N(0, var_u),  eps ~ N(0, var_eps)

with flat priors on ``a``, ``beta`` and ``delta``, ``p(var_eps) ~ 1/var_eps``
and inverse-gamma priors on ``var_alpha`` and ``var_u``.  ``new_i`` flags the
test subject in the joint fit; the training-only fit has no ``delta``.

Each sweep has two blocks.  All location parameters are drawn jointly given
the variances: ``(a, beta, delta)`` from their marginal with ``alpha`` and
``u`` integrated out, then ``alpha | (a, beta, delta)`` with ``u`` integrated
out, then ``u`` given everything.  The three variances are then drawn from
their inverse-gamma full conditionals.  The data enter only through cell
means and the pooled within-cell sum of squares, so a sweep costs
O(cells) regardless of trial counts.

Many datasets sharing one cell layout are sampled together as a batch.  Each
chain owns its own generator and consumes it in a fixed order, so a draw
never depends on what else was in the batch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _rng
from .data import Dataset, DesignSpec, ModelParams, PriorConfig, RunConfig, ValidationError

__all__ = [
    "PARAM_NAMES",
    "RHAT_THRESHOLD",
    "DegenerateDataError",
    "NonConvergenceError",
    "CellLayout",
    "PosteriorDraws",
    "JointPosteriorDraws",
    "fit_training",
    "fit_joint",
    "fit_batch",
    "posterior_prob_delta_leq_zero",
    "gelman_rubin",
    "sample_var_alpha_prior",
]

PARAM_NAMES = ("a", "beta_pop", "var_alpha", "var_u", "var_eps")
RHAT_THRESHOLD = 1.1

_NOISE_CHUNK = 128


class DegenerateDataError(ValidationError):
    """The data carry no information about a variance component."""


class NonConvergenceError(RuntimeError):
    """No usable fit remains after dropping flagged ones."""


@dataclass(frozen=True)
class CellLayout:
    """Cell structure shared by every dataset in a batch.

    One cell is one (subject, weight) combination; ``n`` holds its trial count.
    """

    subject: np.ndarray
    weight: np.ndarray
    new: np.ndarray
    n: np.ndarray
    n_subjects: int
    joint: bool

    @property
    def n_cells(self) -> int:
        return self.subject.size

    @property
    def n_obs(self) -> int:
        return int(self.n.sum())

    @property
    def fixed_design(self) -> np.ndarray:
        cols = [np.ones(self.n_cells), self.weight]
        if self.joint:
            cols.append(-self.weight * self.new)
        return np.column_stack(cols)

    @property
    def indicator(self) -> np.ndarray:
        S = np.zeros((self.n_cells, self.n_subjects))
        S[np.arange(self.n_cells), self.subject] = 1.0
        return S

    @classmethod
    def balanced(cls, train: DesignSpec, n_subjects: int, test: DesignSpec | None = None) -> "CellLayout":
        """Layout for ``n_subjects`` training subjects plus an optional test subject."""
        J, T = train.n_conditions, train.trials_per_condition
        subj = np.repeat(np.arange(n_subjects), J)
        w = np.tile(train.weights_array, n_subjects)
        n = np.full(subj.size, T)
        new = np.zeros(subj.size)
        if test is not None:
            Jt = test.n_conditions
            subj = np.concatenate([subj, np.full(Jt, n_subjects)])
            w = np.concatenate([w, test.weights_array])
            n = np.concatenate([n, np.full(Jt, test.trials_per_condition)])
            new = np.concatenate([new, np.ones(Jt)])
        return cls(subj, w, new, n, n_subjects + (test is not None), test is not None)


def cell_stats(y_train: np.ndarray, y_test: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cell means and within-cell SS for balanced stacks.

    ``y_train`` has shape (D, subjects, conditions, trials) and ``y_test``
    (D, conditions', trials'); the result matches :meth:`CellLayout.balanced`.
    """
    D = y_train.shape[0]
    ybar = y_train.mean(axis=-1)
    ss = ((y_train - ybar[..., None]) ** 2).sum(axis=(1, 2, 3))
    ybar = ybar.reshape(D, -1)
    if y_test is not None:
        tbar = y_test.mean(axis=-1)
        ss = ss + ((y_test - tbar[..., None]) ** 2).sum(axis=(1, 2))
        ybar = np.concatenate([ybar, tbar], axis=1)
    return ybar, ss


def _summarize(datasets: Sequence[tuple[Dataset, bool]]) -> tuple[CellLayout, np.ndarray, np.ndarray]:
    subj, w, new, n, ybar = [], [], [], [], []
    ss = 0.0
    offset = 0
    for ds, is_new in datasets:
        sids = {s: i for i, s in enumerate(ds.subject_ids)}
        for sid in sids:
            for wt, y in ds.for_subject(sid).condition_groups().items():
                subj.append(offset + sids[sid])
                w.append(wt)
                new.append(float(is_new))
                n.append(y.size)
                m = y.mean()
                ybar.append(m)
                ss += float(((y - m) ** 2).sum())
        offset += len(sids)
    joint = any(flag for _, flag in datasets)
    layout = CellLayout(np.array(subj), np.array(w), np.array(new), np.array(n), offset, joint)
    return layout, np.array(ybar)[None, :], np.array([ss])


def _check_data(layout: CellLayout, within_ss: np.ndarray) -> None:
    df = layout.n_obs - layout.n_cells
    if df <= 0:
        raise ValidationError(
            "residual variance is not identified: no condition has repeated trials, "
            "so the 1/var_eps prior gives an improper posterior"
        )
    if np.any(within_ss <= 0):
        raise DegenerateDataError("zero within-condition variance; trials are exactly repeated")


def _moment_init(layout: CellLayout, ybar: np.ndarray, within_ss: np.ndarray) -> np.ndarray:
    """Method-of-moments (var_alpha, var_u, var_eps) per dataset."""
    F = layout.fixed_design[:, 1:]
    X = np.column_stack([layout.indicator, F])
    df_w = layout.n_obs - layout.n_cells
    out = np.empty((ybar.shape[0], 3))
    for d in range(ybar.shape[0]):
        coef, *_ = np.linalg.lstsq(X, ybar[d], rcond=None)
        resid = ybar[d] - X @ coef
        var_eps = within_ss[d] / df_w
        dof = max(layout.n_cells - np.linalg.matrix_rank(X), 1)
        s2 = float(resid @ resid) / dof
        noise = float(np.mean(var_eps / layout.n))
        var_u = max(s2 - noise, 0.1 * noise, 1e-8)
        var_alpha = max(float(np.var(coef[: layout.n_subjects], ddof=1)) if layout.n_subjects > 1 else 0.0,
                        var_u, 1e-8)
        out[d] = (var_alpha, var_u, var_eps)
    return out


def _gibbs(layout: CellLayout, ybar: np.ndarray, within_ss: np.ndarray, priors: PriorConfig,
           run: RunConfig, seeds: Sequence[int], fixed: Mapping[str, float] | None = None) -> np.ndarray:
    """Run ``run.chains`` chains per dataset; returns kept draws (D, C, n_keep, P)."""
    fixed = dict(fixed or {})
    unknown = set(fixed) - {"var_alpha", "var_u", "var_eps"}
    if unknown:
        raise ValueError(f"only variance components can be fixed, got {sorted(unknown)}")
    D, K = ybar.shape
    C = run.chains
    B = D * C
    N = layout.n_subjects
    F = layout.fixed_design
    q = F.shape[1]
    S = layout.indicator
    n = layout.n.astype(float)
    subj = layout.subject
    n_iter = run.draws_per_chain
    n_keep = n_iter - run.burn_in

    ybar_b = np.repeat(ybar, C, axis=0)
    ss_b = np.repeat(within_ss, C)

    init = _moment_init(layout, ybar, within_ss)
    var = np.empty((B, 3))
    gens = []
    for d, seed in enumerate(seeds):
        for c in range(C):
            jitter = _rng.stream(seed, _rng.INIT, c).normal(0.0, 0.5, size=3)
            var[d * C + c] = init[d] * np.exp(jitter)
            gens.append(_rng.stream(seed, _rng.CHAIN, c))
    for j, name in enumerate(("var_alpha", "var_u", "var_eps")):
        if name in fixed:
            var[:, j] = fixed[name]
    sa, su, se = var[:, 0].copy(), var[:, 1].copy(), var[:, 2].copy()

    shapes = np.array([priors.eta + N / 2, priors.eta_u + K / 2, layout.n_obs / 2])
    n_z = q + N + K
    P = len(PARAM_NAMES) + (1 if layout.joint else 0)
    out = np.empty((B, n_keep, P))

    for start in range(0, n_iter, _NOISE_CHUNK):
        size = min(_NOISE_CHUNK, n_iter - start)
        z = np.stack([g.standard_normal((_NOISE_CHUNK, n_z)) for g in gens])
        gam = np.stack([g.standard_gamma(shapes, size=(_NOISE_CHUNK, 3)) for g in gens])
        for t in range(size):
            zt = z[:, t]
            # Fixed effects with alpha and u integrated out.
            v = 1.0 / (su[:, None] + se[:, None] / n)
            tau = 1.0 / sa
            vF = v[:, :, None] * F
            S0 = v @ S
            h = 1.0 / (S0 + tau[:, None])
            m = np.matmul(S.T, vF)
            A = np.einsum("bkq,kr->bqr", vF, F) - np.einsum("bnq,bnr,bn->bqr", m, m, h)
            vy = v * ybar_b
            g_sub = vy @ S
            rhs = vy @ F - np.einsum("bnq,bn->bq", m, g_sub * h)
            L = np.linalg.cholesky(A)
            w1 = np.linalg.solve(L, rhs[:, :, None])[:, :, 0] + zt[:, :q]
            gamma = np.linalg.solve(np.swapaxes(L, 1, 2), w1[:, :, None])[:, :, 0]
            # Subject intercepts with u integrated out.
            r = ybar_b - gamma @ F.T
            alpha = ((v * r) @ S) * h + zt[:, q:q + N] * np.sqrt(h)
            # Subject-by-weight effects.
            e = r - alpha[:, subj]
            prec_u = n / se[:, None] + 1.0 / su[:, None]
            u = (n / se[:, None]) * e / prec_u + zt[:, q + N:] / np.sqrt(prec_u)
            # Variance components.
            gt = gam[:, t]
            if "var_alpha" not in fixed:
                sa = (priors.nu + 0.5 * (alpha**2).sum(axis=1)) / gt[:, 0]
            if "var_u" not in fixed:
                su = (priors.nu_u + 0.5 * (u**2).sum(axis=1)) / gt[:, 1]
            if "var_eps" not in fixed:
                d = e - u
                se = 0.5 * (ss_b + (n * d**2).sum(axis=1)) / gt[:, 2]
            k = start + t - run.burn_in
            if k >= 0:
                out[:, k, 0] = gamma[:, 0]
                out[:, k, 1] = gamma[:, 1]
                out[:, k, 2] = sa
                out[:, k, 3] = su
                out[:, k, 4] = se
                if layout.joint:
                    out[:, k, 5] = gamma[:, 2]
    return out.reshape(D, C, n_keep, P)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor for traces of shape (chains, draws).

    Uses ``var+ = W + B/n``, so identical chains give exactly 1.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    m, n = x.shape
    if n < 10:
        raise ValueError("gelman_rubin needs at least 10 draws per chain")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    Bn = means.var(ddof=1)
    if W <= 0:
        return 1.0 if Bn <= 0 else float("inf")
    return float(np.sqrt((W + Bn) / W))


def _rhat(trace: np.ndarray, names: Sequence[str]) -> dict[str, float]:
    if trace.shape[0] < 2 or trace.shape[1] < 10:
        return {name: float("nan") for name in names}
    return {name: gelman_rubin(trace[:, :, j]) for j, name in enumerate(names)}


@dataclass(frozen=True)
class PosteriorDraws:
    """Kept draws from every chain; ``trace`` has shape (chains, draws, params)."""

    trace: np.ndarray
    rhat: dict[str, float]
    seed: int
    run: RunConfig
    priors: PriorConfig
    fixed: dict[str, float] = field(default_factory=dict)

    names = PARAM_NAMES

    def _col(self, name: str) -> np.ndarray:
        return self.trace[:, :, self.names.index(name)].reshape(-1)

    @property
    def a(self) -> np.ndarray:
        return self._col("a")

    @property
    def beta_pop(self) -> np.ndarray:
        return self._col("beta_pop")

    @property
    def var_alpha(self) -> np.ndarray:
        return self._col("var_alpha")

    @property
    def var_u(self) -> np.ndarray:
        return self._col("var_u")

    @property
    def var_eps(self) -> np.ndarray:
        return self._col("var_eps")

    def __len__(self) -> int:
        return self.trace.shape[0] * self.trace.shape[1]

    @property
    def converged(self) -> bool:
        vals = [r for r in self.rhat.values() if np.isfinite(r)]
        return all(r <= RHAT_THRESHOLD for r in vals) and len(vals) == len(self.rhat)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: self._col(name) for name in PARAM_NAMES}

    @property
    def draws(self) -> list[ModelParams]:
        cols = self.param_arrays()
        return [ModelParams(*(float(cols[k][i]) for k in PARAM_NAMES)) for i in range(len(self))]

    def summary(self) -> dict[str, tuple[float, float]]:
        return {name: (float(self._col(name).mean()), float(self._col(name).std(ddof=1)))
                for name in self.names}

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        """Write ``chain,iter,<params>`` rows; ``iter`` counts from the end of burn-in."""
        C, n_keep, P = self.trace.shape
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter", *self.names])
            for c in range(C):
                for i in range(n_keep):
                    w.writerow([c, i, *(repr(float(x)) for x in self.trace[c, i])])


@dataclass(frozen=True)
class JointPosteriorDraws(PosteriorDraws):
    names = PARAM_NAMES + ("delta",)

    @property
    def delta(self) -> np.ndarray:
        return self._col("delta")

    @property
    def beta_test(self) -> np.ndarray:
        return self.beta_pop - self.delta


def fit_batch(layout: CellLayout, ybar: np.ndarray, within_ss: np.ndarray,
              priors: PriorConfig | None = None, run: RunConfig | None = None,
              seeds: Sequence[int] | None = None,
              fixed: Mapping[str, float] | None = None) -> list[PosteriorDraws]:
    """Fit every dataset of a batch that shares ``layout``.

    ``ybar`` is (D, cells) and ``within_ss`` is (D,).  Dataset ``d`` uses
    ``seeds[d]`` (default: ``run.seed`` for all).
    """
    priors = priors or PriorConfig()
    run = run or RunConfig()
    ybar = np.atleast_2d(np.asarray(ybar, dtype=float))
    within_ss = np.atleast_1d(np.asarray(within_ss, dtype=float))
    if seeds is None:
        seeds = [run.seed] * ybar.shape[0]
    if layout.n_subjects - int(layout.joint) < 2:
        raise ValidationError("at least two training subjects are required")
    if np.unique(layout.weight[layout.new == 0]).size < 2:
        raise ValidationError("at least two weight conditions are required")
    _check_data(layout, within_ss)
    traces = _gibbs(layout, ybar, within_ss, priors, run, seeds, fixed)
    cls = JointPosteriorDraws if layout.joint else PosteriorDraws
    fixed = dict(fixed or {})
    out = []
    for d, seed in enumerate(seeds):
        rh = _rhat(traces[d], cls.names)
        for name in fixed:
            rh[name] = 1.0
        out.append(cls(traces[d], rh, int(seed), run, priors, fixed))
    return out


def fit_training(train: Dataset, priors: PriorConfig | None = None, run: RunConfig | None = None,
                 fixed: Mapping[str, float] | None = None) -> PosteriorDraws:
    """Posterior draws of (a, beta_pop, var_alpha, var_u, var_eps) from training data.

    ``fixed`` pins variance components at given values (used for checks
    against exact posteriors).  Check ``converged`` on the result: an R-hat
    above 1.1 is flagged there rather than raised.
    """
    if len(train.subject_ids) < 2:
        raise ValidationError("at least two training subjects are required")
    layout, ybar, ss = _summarize([(train, False)])
    return fit_batch(layout, ybar, ss, priors, run, fixed=fixed)[0]


def fit_joint(train: Dataset, test: Dataset, priors: PriorConfig | None = None,
              run: RunConfig | None = None) -> JointPosteriorDraws:
    """Joint fit of training data and one test subject with slope ``beta_pop - delta``."""
    if test.n_records == 0:
        raise ValidationError("test dataset is empty")
    if len(test.subject_ids) != 1:
        raise ValidationError("the joint fit takes exactly one test subject")
    if len(test.condition_groups()) < 2:
        raise ValidationError("the test subject needs at least two conditions")
    if len(train.subject_ids) < 2:
        raise ValidationError("at least two training subjects are required")
    layout, ybar, ss = _summarize([(train, False), (test, True)])
    return fit_batch(layout, ybar, ss, priors, run)[0]


def posterior_prob_delta_leq_zero(joint: JointPosteriorDraws) -> float:
    """Share of draws with ``delta <= 0``; reject at level α when below α."""
    d = joint.delta
    if d.size == 0:
        raise ValueError("no draws")
    return float(np.mean(d <= 0))


def _inv_gamma(rng: np.random.Generator, shape: float, scale):
    return scale / rng.standard_gamma(shape)


def sample_var_alpha_prior(priors: PriorConfig | None = None, n_subjects: int = 10,
                           n_draws: int = 4000, seed: int = 0, burn_in: int = 100) -> np.ndarray:
    """Run the intercept-variance block with no outcome data.

    Alternates ``alpha ~ N(0, var_alpha)`` and the sampler's inverse-gamma
    update for ``var_alpha``; the stationary law is the prior itself.
    """
    priors = priors or PriorConfig()
    rng = _rng.stream(seed, _rng.CHAIN, 0)
    sa = priors.var_alpha_prior_mean
    out = np.empty(n_draws)
    for i in range(burn_in + n_draws):
        alpha = rng.normal(0.0, np.sqrt(sa), size=n_subjects)
        sa = _inv_gamma(rng, priors.eta + n_subjects / 2, priors.nu + 0.5 * float(alpha @ alpha))
        if i >= burn_in:
            out[i - burn_in] = sa
    return out
