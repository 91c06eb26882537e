"""Simulation studies: error-rate tables for Tests A, B, B* and C, and power curves.

* Test A compares each test subject with the slope's sampling distribution
  under the known truth ("gold standard").
* Test B compares it with a template built from one simulated training set;
  rates are averaged over replicate training sets.
* Test B* reads the same rates off the overlap between the null template and
  its location-shifted alternative, with no test subjects at all.
* Test C fits training data and test subject jointly and rejects when the
  posterior probability of ``delta <= 0`` falls below the level.

Test subjects for a slope deficit ``delta`` are the null subjects with
``delta * w`` subtracted (common random numbers across the grid), which
lowers their naive slope by exactly ``delta``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _rng
from .data import Dataset, DesignSpec, ModelParams, PriorConfig, RunConfig, ValidationError, parse_design
from .decision import fnr_by_overlap
from .estimator import pair_coefficients
from .gibbs import CellLayout, NonConvergenceError, cell_stats, fit_batch
from .template import TemplateDistribution, build_template, critical_value

__all__ = [
    "REFERENCE_TRUTH",
    "TRAIN_DESIGN",
    "N_TRAIN",
    "SCENARIO_DESIGNS",
    "DELTA_GRID",
    "POWER_DESIGNS",
    "SimScenario",
    "ErrorRateTable",
    "PowerCurves",
    "scenario",
    "load_scenario",
    "simulate_subject",
    "simulate_outcomes",
    "run_test_A",
    "run_test_B",
    "run_test_C",
    "run_table",
    "power_study",
]

REFERENCE_TRUTH = ModelParams.from_sds(a=2.8, beta_pop=1.4, sd_alpha=0.3, sd_u=0.1, sd_eps=0.2)
TRAIN_DESIGN = DesignSpec(tuple(g / 1000 for g in range(250, 701, 50)), 6)
N_TRAIN = 10
SCENARIO_DESIGNS = {
    "one": DesignSpec((0.25, 0.50), 5),
    "two": DesignSpec((0.25, 0.50, 0.75), 5),
}
DELTA_GRID = tuple(round(0.1 * k, 1) for k in range(14))
POWER_DESIGNS = tuple(parse_design(s) for s in (
    "200,400g x 5", "200,600g x 5", "200,400,600g x 5",
    "200,800g x 5", "200,500,800g x 5", "200,400,600,800g x 5",
))

# Datasets per batched Gibbs call.
_FIT_BATCH = 50


@dataclass(frozen=True)
class SimScenario:
    name: str
    test_design: DesignSpec
    truth: ModelParams = REFERENCE_TRUTH
    train_design: DesignSpec = TRAIN_DESIGN
    n_subjects: int = N_TRAIN
    delta_grid: tuple[float, ...] = DELTA_GRID
    levels: tuple[float, ...] = (0.05, 0.10)
    replicates: int = 500
    seed: int = 0
    priors: PriorConfig = field(default_factory=PriorConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if 0.0 not in self.delta_grid:
            raise ValidationError("delta_grid must include 0 (the null row)")
        if any(d < 0 for d in self.delta_grid):
            raise ValidationError("delta_grid values must be nonnegative")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if not all(0 < a < 1 for a in self.levels):
            raise ValidationError("levels must lie in (0, 1)")
        if self.n_subjects < 2:
            raise ValidationError("need at least two training subjects")


def scenario(name: str, **overrides) -> SimScenario:
    """Preset scenario ``"one"`` (250/500 g) or ``"two"`` (250/500/750 g), 5 trials each."""
    if name not in SCENARIO_DESIGNS:
        raise ValidationError(f"unknown scenario {name!r}; choose one of {sorted(SCENARIO_DESIGNS)}")
    return SimScenario(name=name, test_design=SCENARIO_DESIGNS[name], **overrides)


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return tuple(round(lo + k * step, 10) for k in range(n))
    return tuple(float(x) for x in text.split(",") if x.strip())


def load_scenario(path: str | Path, **overrides) -> SimScenario:
    """Scenario from a ``key=value`` file.

    Keys: ``name``, ``test_design``, ``train_design`` (design strings such as
    ``250,500g x 5``), ``n_subjects``, ``a``, ``beta_pop``, ``sd_alpha``,
    ``sd_u``, ``sd_eps``, ``delta_grid`` and ``levels`` (comma lists or
    ``lo:hi:step``), ``replicates``, ``seed``.
    """
    kv = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    known = {"name", "test_design", "train_design", "n_subjects", "a", "beta_pop", "sd_alpha", "sd_u",
             "sd_eps", "delta_grid", "levels", "replicates", "seed"}
    extra = set(kv) - known
    if extra:
        raise ValidationError(f"{path}: unknown scenario keys {sorted(extra)}")
    if "test_design" not in kv:
        raise ValidationError(f"{path}: test_design is required")
    t = REFERENCE_TRUTH
    try:
        truth = ModelParams.from_sds(
            float(kv.get("a", t.a)), float(kv.get("beta_pop", t.beta_pop)),
            float(kv.get("sd_alpha", math.sqrt(t.var_alpha))), float(kv.get("sd_u", math.sqrt(t.var_u))),
            float(kv.get("sd_eps", math.sqrt(t.var_eps))),
        )
        args = dict(
            name=kv.get("name", Path(path).stem),
            test_design=parse_design(kv["test_design"]),
            truth=truth,
            train_design=parse_design(kv["train_design"]) if "train_design" in kv else TRAIN_DESIGN,
            n_subjects=int(kv.get("n_subjects", N_TRAIN)),
            delta_grid=_floats(kv["delta_grid"]) if "delta_grid" in kv else DELTA_GRID,
            levels=_floats(kv["levels"]) if "levels" in kv else (0.05, 0.10),
            replicates=int(kv.get("replicates", 500)),
            seed=int(kv.get("seed", 0)),
        )
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    args.update(overrides)
    return SimScenario(**args)


def simulate_outcomes(truth: ModelParams, design: DesignSpec, n_subjects: int, rng: np.random.Generator,
                      beta: float | None = None) -> np.ndarray:
    """Outcomes of shape (subjects, conditions, trials) from the hierarchical model."""
    J, T = design.n_conditions, design.trials_per_condition
    w = design.weights_array
    slope = truth.beta_pop if beta is None else beta
    alpha = rng.normal(0.0, math.sqrt(truth.var_alpha), size=(n_subjects, 1, 1))
    u = rng.normal(0.0, math.sqrt(truth.var_u), size=(n_subjects, J, 1))
    eps = rng.normal(0.0, math.sqrt(truth.var_eps), size=(n_subjects, J, T))
    return truth.a + slope * w[None, :, None] + alpha + u + eps


def simulate_subject(truth: ModelParams, design: DesignSpec, beta_override: float | None = None,
                     rng: np.random.Generator | None = None, subject_id: str = "test"):
    """One simulated subject as a Dataset, slope ``beta_override`` if given."""
    rng = rng if rng is not None else np.random.default_rng()
    y = simulate_outcomes(truth, design, 1, rng, beta_override)
    return Dataset.from_array(y, design, [subject_id])


def _null_slopes(scn: SimScenario, n: int, *key: int) -> np.ndarray:
    y = simulate_outcomes(scn.truth, scn.test_design, n, _rng.stream(scn.seed, *key))
    return y.mean(axis=2) @ pair_coefficients(scn.test_design.weights)


def _binom_se(r: float, n: int) -> float:
    return math.sqrt(max(r * (1 - r), 0.0) / n) if n > 0 else float("nan")


@dataclass
class Column:
    """Rates and MC standard errors keyed by (delta_alt, level)."""

    rate: dict[tuple[float, float], float] = field(default_factory=dict)
    se: dict[tuple[float, float], float] = field(default_factory=dict)


def run_test_A(scn: SimScenario) -> Column:
    """Gold-standard column: critical values from ``R`` null subjects under the truth.

    The null row holds the nominal level, which the rule attains by
    construction (zero standard error); :func:`empirical_fpr_A` gives the
    rate observed on fresh null subjects.
    """
    R = scn.replicates
    dist_a = TemplateDistribution(_null_slopes(scn, R, _rng.DIST_A), scn.test_design, scn.truth.beta_pop)
    fresh = _null_slopes(scn, R, _rng.TEST_SUBJECT, 1)
    col = Column()
    for level in scn.levels:
        c = critical_value(dist_a, level)
        for d in scn.delta_grid:
            if d == 0.0:
                col.rate[(d, level)] = level
                col.se[(d, level)] = 0.0
            else:
                fnr = float(np.mean(fresh - d >= c))
                col.rate[(d, level)] = fnr
                col.se[(d, level)] = _binom_se(fnr, R)
    return col


def empirical_fpr_A(scn: SimScenario) -> dict[float, float]:
    """Rejection rate of the Test A rule on fresh null subjects, per level."""
    R = scn.replicates
    dist_a = TemplateDistribution(_null_slopes(scn, R, _rng.DIST_A), scn.test_design, scn.truth.beta_pop)
    fresh = _null_slopes(scn, R, _rng.TEST_SUBJECT, 1)
    return {level: float(np.mean(fresh < critical_value(dist_a, level))) for level in scn.levels}


def _train_batch(args) -> list[tuple[np.ndarray, dict]]:
    """Fit a batch of training replicates; returns posterior arrays and flags."""
    scn, tag, indices = args
    lay = CellLayout.balanced(scn.train_design, scn.n_subjects)
    y = np.stack([simulate_outcomes(scn.truth, scn.train_design, scn.n_subjects,
                                    _rng.stream(scn.seed, _rng.TRAIN, tag, k)) for k in indices])
    ybar, ss = cell_stats(y)
    seeds = [_rng.derive_seed(scn.seed, _rng.FIT, tag, k) for k in indices]
    return list(fit_batch(lay, ybar, ss, scn.priors, scn.run, seeds))


def _fit_training_sets(scn: SimScenario, n: int, tag: int):
    work = [(scn, tag, list(idx)) for idx in _rng.chunks(n, _FIT_BATCH)]
    return [p for batch in _rng.parallel_map(_train_batch, work) for p in batch]


@dataclass
class BResult:
    B: Column
    Bstar: Column
    # Spread across templates of each template's own rate (the single-template s.e.).
    sd_B: dict[tuple[float, float], float]
    sd_Bstar: dict[tuple[float, float], float]
    n_templates: int
    n_flagged: int
    templates: list[TemplateDistribution]


def run_test_B(scn: SimScenario, n_templates: int = 50) -> BResult:
    """Columns B and B* from ``n_templates`` independent training sets.

    Templates whose fit did not converge are left out and counted.
    """
    if n_templates < 1:
        raise ValidationError("n_templates must be at least 1")
    posts = _fit_training_sets(scn, n_templates, 0)
    templates, flagged = [], 0
    for k, post in enumerate(posts):
        if not post.converged:
            flagged += 1
            continue
        t_seed = _rng.derive_seed(scn.seed, _rng.TEMPLATE, k)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            templates.append((k, build_template(post, scn.test_design, scn.run.template_draws, t_seed)))
    if not templates:
        raise NonConvergenceError("every training fit was flagged as non-converged")

    keys = [(d, a) for a in scn.levels for d in scn.delta_grid]
    rb = {key: [] for key in keys}
    rs = {key: [] for key in keys}
    for k, t in templates:
        slopes = _null_slopes(scn, scn.replicates, _rng.TEST_SUBJECT, 0, k)
        for level in scn.levels:
            c = critical_value(t, level)
            for d in scn.delta_grid:
                reject = float(np.mean(slopes - d < c))
                fnr_star = fnr_by_overlap(t, d, level)
                rb[(d, level)].append(reject if d == 0 else 1 - reject)
                rs[(d, level)].append(1 - fnr_star if d == 0 else fnr_star)

    out_b, out_s, sd_b, sd_s = Column(), Column(), {}, {}
    K = len(templates)
    for key in keys:
        for src, col, sd in ((rb, out_b, sd_b), (rs, out_s, sd_s)):
            arr = np.array(src[key])
            col.rate[key] = float(arr.mean())
            spread = float(arr.std(ddof=1)) if K > 1 else float("nan")
            sd[key] = spread
            col.se[key] = spread / math.sqrt(K) if K > 1 else float("nan")
    return BResult(out_b, out_s, sd_b, sd_s, K, flagged, [t for _, t in templates])


def _joint_batch(args) -> tuple[np.ndarray, int]:
    """P(delta <= 0) for a batch of (training set, test subject) replicates at one delta."""
    scn, d_index, indices = args
    d = scn.delta_grid[d_index]
    lay = CellLayout.balanced(scn.train_design, scn.n_subjects, scn.test_design)
    w_test = scn.test_design.weights_array
    ytr, yte = [], []
    for r in indices:
        ytr.append(simulate_outcomes(scn.truth, scn.train_design, scn.n_subjects,
                                     _rng.stream(scn.seed, _rng.TRAIN, 1, r)))
        y0 = simulate_outcomes(scn.truth, scn.test_design, 1, _rng.stream(scn.seed, _rng.TEST_SUBJECT, 2, r))[0]
        yte.append(y0 - d * w_test[:, None])
    ybar, ss = cell_stats(np.stack(ytr), np.stack(yte))
    seeds = [_rng.derive_seed(scn.seed, _rng.JOINT, r, d_index) for r in indices]
    posts = fit_batch(lay, ybar, ss, scn.priors, scn.run, seeds)
    prob = np.array([np.mean(p.delta <= 0) for p in posts])
    ok = np.array([p.converged for p in posts])
    return np.where(ok, prob, np.nan), int((~ok).sum())


@dataclass
class CResult:
    C: Column
    n_flagged: int
    prob: dict[float, np.ndarray]


def run_test_C(scn: SimScenario, replicates: int | None = None) -> CResult:
    """Joint-fit posterior probability test over ``replicates`` (default ``scn.replicates``) pairs."""
    R = scn.replicates if replicates is None else replicates
    work = [(scn, i, list(idx)) for i in range(len(scn.delta_grid)) for idx in _rng.chunks(R, _FIT_BATCH)]
    results = _rng.parallel_map(_joint_batch, work)
    prob: dict[float, list[np.ndarray]] = {d: [] for d in scn.delta_grid}
    flagged = 0
    for (_, i, _), (p, nf) in zip(work, results):
        prob[scn.delta_grid[i]].append(p)
        flagged += nf
    col = Column()
    probs = {}
    for d in scn.delta_grid:
        p = np.concatenate(prob[d])
        probs[d] = p
        p = p[np.isfinite(p)]
        for level in scn.levels:
            reject = float(np.mean(p < level)) if p.size else float("nan")
            rate = reject if d == 0 else 1 - reject
            col.rate[(d, level)] = rate
            col.se[(d, level)] = _binom_se(rate, p.size)
    return CResult(col, flagged, probs)


TABLE_TESTS = ("test_A", "test_B", "test_Bstar", "test_C")


@dataclass
class ErrorRateTable:
    """Rows keyed by (delta_alt, level); FPRs in the null row, FNRs elsewhere."""

    scenario: str
    delta_grid: tuple[float, ...]
    levels: tuple[float, ...]
    columns: dict[str, Column]
    meta: dict = field(default_factory=dict)

    def rate(self, test: str, delta: float, level: float) -> float:
        col = self.columns.get(test)
        return float("nan") if col is None else col.rate.get((delta, level), float("nan"))

    def se(self, test: str, delta: float, level: float) -> float:
        col = self.columns.get(test)
        return float("nan") if col is None else col.se.get((delta, level), float("nan"))

    def rows(self) -> list[dict]:
        out = []
        for level in self.levels:
            for d in self.delta_grid:
                row = {"level": level, "delta_alt": d}
                for test in TABLE_TESTS:
                    row[test] = self.rate(test, d, level)
                for test in TABLE_TESTS:
                    row[f"se_{test[5:]}"] = self.se(test, d, level)
                out.append(row)
        return out

    def to_csv(self, path: str | Path | None = None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        rows = self.rows()
        cols = ["scenario", "level", "delta_alt", *TABLE_TESTS, *(f"se_{t[5:]}" for t in TABLE_TESTS)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            cells = [self.scenario]
            for c in cols[1:]:
                v = row[c]
                cells.append("" if isinstance(v, float) and math.isnan(v) else f"{v:.6g}")
            w.writerow(cells)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def run_table(scn: SimScenario, n_templates: int = 50, tests: Sequence[str] = ("A", "B", "C"),
              test_c_replicates: int | None = None) -> ErrorRateTable:
    """Error-rate table for the selected tests ("A", "B" including B*, "C")."""
    cols: dict[str, Column] = {}
    meta: dict = {"replicates": scn.replicates, "seed": scn.seed}
    if "A" in tests:
        cols["test_A"] = run_test_A(scn)
        meta["empirical_fpr_A"] = empirical_fpr_A(scn)
    if "B" in tests:
        res = run_test_B(scn, n_templates)
        cols["test_B"], cols["test_Bstar"] = res.B, res.Bstar
        meta.update(n_templates=res.n_templates, flagged_templates=res.n_flagged,
                    template_sd_B=res.sd_B, template_sd_Bstar=res.sd_Bstar)
    if "C" in tests:
        res_c = run_test_C(scn, test_c_replicates)
        cols["test_C"] = res_c.C
        meta["flagged_joint_fits"] = res_c.n_flagged
        meta["joint_fits"] = sum(p.size for p in res_c.prob.values())
    return ErrorRateTable(scn.name, scn.delta_grid, scn.levels, cols, meta)


@dataclass
class PowerCurves:
    designs: list[DesignSpec]
    delta_grid: tuple[float, ...]
    level: float
    power: np.ndarray  # (designs, deltas), mean over runs
    se: np.ndarray  # standard error of that mean; NaN with a single run
    n_runs: int
    n_flagged: int

    def curve(self, design: DesignSpec | str) -> np.ndarray:
        if isinstance(design, str):
            design = parse_design(design)
        return self.power[self.designs.index(design)]

    def to_csv(self, path: str | Path | None = None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "delta_alt", "power", "se"])
        for i, des in enumerate(self.designs):
            for j, d in enumerate(self.delta_grid):
                se = self.se[i, j]
                w.writerow([str(des), f"{d:g}", f"{self.power[i, j]:.6g}", "" if math.isnan(se) else f"{se:.6g}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def power_study(designs: Sequence[DesignSpec] = POWER_DESIGNS, truth: ModelParams = REFERENCE_TRUTH,
                delta_grid: Sequence[float] = DELTA_GRID[1:], level: float = 0.10, n_runs: int = 100,
                seed: int = 0, train_design: DesignSpec = TRAIN_DESIGN, n_subjects: int = N_TRAIN,
                priors: PriorConfig | None = None, run: RunConfig | None = None) -> PowerCurves:
    """Power ``1 - FNR`` from template overlap, averaged over ``n_runs`` training sets.

    Every design is evaluated against the same posterior within a run.
    """
    designs = list(designs)
    if not designs:
        raise ValidationError("no designs given")
    if n_runs < 1:
        raise ValidationError("n_runs must be at least 1")
    if n_runs < 10:
        warnings.warn("fewer than 10 runs; power estimates will be noisy", stacklevel=2)
    delta_grid = tuple(float(d) for d in delta_grid)
    scn = SimScenario(name="power", test_design=designs[0], truth=truth, train_design=train_design,
                      n_subjects=n_subjects, delta_grid=(0.0,), levels=(level,), seed=seed,
                      priors=priors or PriorConfig(), run=run or RunConfig())
    posts = _fit_training_sets(scn, n_runs, 2)
    per_run, flagged = [], 0
    for k, post in enumerate(posts):
        if not post.converged:
            flagged += 1
            continue
        row = np.empty((len(designs), len(delta_grid)))
        for i, des in enumerate(designs):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                t = build_template(post, des, scn.run.template_draws, _rng.derive_seed(seed, _rng.POWER, k, i))
            row[i] = [1 - fnr_by_overlap(t, d, level) for d in delta_grid]
        per_run.append(row)
    if not per_run:
        raise NonConvergenceError("every training fit was flagged as non-converged")
    arr = np.stack(per_run)
    n = arr.shape[0]
    se = arr.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(arr.shape[1:], np.nan)
    return PowerCurves(designs, delta_grid, level, arr.mean(axis=0), se, n, flagged)
