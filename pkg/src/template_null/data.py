"""Domain types, CSV ingestion and run configuration.

Masses are grams in files and kilograms everywhere inside the library, so a
slope of 1.4 reads as "1.4 log-N/ms per 1000 g".  Outcomes are always stored
on the natural-log scale.
"""
from __future__ import annotations

import csv
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "TrialRecord",
    "DesignSpec",
    "Dataset",
    "ModelParams",
    "PriorConfig",
    "RunConfig",
    "parse_design",
    "format_design",
    "ingest_csv",
    "write_csv",
    "validate_test_design",
    "load_config",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("subject_id", "weight_grams", "trial", "plfr", "plfr_log")

# Weights are compared after rounding to this many decimals of a kilogram.
_KG_DECIMALS = 9


class ValidationError(ValueError):
    """Input data or configuration violates a documented invariant."""


def _kg(grams: float) -> float:
    return round(float(grams) / 1000.0, _KG_DECIMALS)


def _grams(kg: float) -> float:
    return round(kg * 1000.0, 6)


@dataclass(frozen=True)
class TrialRecord:
    subject_id: str
    condition_weight: float  # kg
    trial_index: int
    outcome: float  # log PLFR

    def __post_init__(self):
        if not self.condition_weight > 0:
            raise ValidationError(f"nonpositive weight {self.condition_weight!r}")
        if not math.isfinite(self.outcome):
            raise ValidationError(f"non-finite outcome {self.outcome!r}")
        if self.trial_index < 1:
            raise ValidationError(f"trial index must be >= 1, got {self.trial_index}")


@dataclass(frozen=True)
class DesignSpec:
    """A weight layout: condition masses in kg and trials per condition."""

    weights: tuple[float, ...]
    trials_per_condition: int

    def __post_init__(self):
        w = tuple(round(float(x), _KG_DECIMALS) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) < 2:
            raise ValidationError("a design needs at least two weight conditions (J >= 2)")
        if any(x <= 0 for x in w):
            raise ValidationError("design weights must be positive")
        if any(b <= a for a, b in zip(w, w[1:])):
            raise ValidationError("design weights must be strictly increasing")
        if int(self.trials_per_condition) != self.trials_per_condition or self.trials_per_condition < 1:
            raise ValidationError("trials_per_condition must be a positive integer")
        object.__setattr__(self, "trials_per_condition", int(self.trials_per_condition))

    @property
    def n_conditions(self) -> int:
        return len(self.weights)

    @property
    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def weights_grams(self) -> list[float]:
        return [_grams(w) for w in self.weights]

    def same_weights(self, other: "DesignSpec") -> bool:
        return self.weights == other.weights

    def __str__(self) -> str:
        return format_design(self)


_DESIGN_RE = re.compile(r"^\s*(?P<w>[0-9.,\s]+?)\s*g\s*x\s*(?P<t>\d+)\s*$", re.IGNORECASE)


def parse_design(text: str) -> DesignSpec:
    """Parse a design string such as ``"250,500g x 5"`` (grams, trials after 'x')."""
    m = _DESIGN_RE.match(text)
    if m is None:
        raise ValidationError(f"cannot parse design {text!r}; expected e.g. '250,500g x 5'")
    try:
        grams = [float(tok) for tok in m.group("w").split(",") if tok.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad weight list in design {text!r}") from exc
    return DesignSpec(tuple(_kg(g) for g in grams), int(m.group("t")))


def format_design(design: DesignSpec) -> str:
    grams = ",".join(f"{g:g}" for g in design.weights_grams)
    return f"{grams}g x {design.trials_per_condition}"


@dataclass(frozen=True)
class Dataset:
    records: tuple[TrialRecord, ...]
    design: DesignSpec
    unbalanced: bool = False

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        keys = Counter((r.subject_id, r.condition_weight, r.trial_index) for r in self.records)
        dup = [k for k, c in keys.items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate (subject, weight, trial) entries: {dup[:3]}")
        allowed = set(self.design.weights)
        stray = sorted({r.condition_weight for r in self.records} - allowed)
        if stray:
            raise ValidationError(
                f"record weights {[_grams(w) for w in stray]} g not in the declared design"
            )
        T = self.design.trials_per_condition
        unbalanced = False
        for (sid, w), idx in self._cell_trials().items():
            if max(idx) > T or len(idx) > T:
                raise ValidationError(
                    f"subject {sid!r} at {_grams(w):g} g has trials beyond T={T}"
                )
            if sorted(idx) != list(range(1, len(idx) + 1)) or len(idx) != T:
                unbalanced = True
        cells = {(r.subject_id, r.condition_weight) for r in self.records}
        if len(cells) != len(self.subject_ids) * self.design.n_conditions:
            unbalanced = True
        object.__setattr__(self, "unbalanced", unbalanced)

    def _cell_trials(self) -> dict[tuple[str, float], list[int]]:
        out: dict[tuple[str, float], list[int]] = defaultdict(list)
        for r in self.records:
            out[(r.subject_id, r.condition_weight)].append(r.trial_index)
        return out

    @property
    def subject_ids(self) -> list[str]:
        return list(dict.fromkeys(r.subject_id for r in self.records))

    @property
    def n_records(self) -> int:
        return len(self.records)

    def for_subject(self, subject_id: str) -> "Dataset":
        recs = tuple(r for r in self.records if r.subject_id == subject_id)
        if not recs:
            raise KeyError(subject_id)
        return Dataset(recs, self.design)

    def restrict_weights(self, weights: Iterable[float], design: DesignSpec | None = None) -> "Dataset":
        """Records at the given weights only, re-declared under ``design``."""
        keep = {round(w, _KG_DECIMALS) for w in weights}
        recs = tuple(r for r in self.records if r.condition_weight in keep)
        if design is None:
            design = DesignSpec(tuple(sorted(keep)), self.design.trials_per_condition)
        return Dataset(recs, design)

    def condition_groups(self) -> dict[float, np.ndarray]:
        """Outcome arrays keyed by weight (kg), weights ascending, trials in index order."""
        groups: dict[float, list[tuple[int, float]]] = defaultdict(list)
        for r in self.records:
            groups[r.condition_weight].append((r.trial_index, r.outcome))
        return {
            w: np.array([y for _, y in sorted(groups[w])], dtype=float)
            for w in sorted(groups)
        }

    def outcome_array(self) -> np.ndarray:
        """Balanced data as an array of shape (subjects, conditions, trials)."""
        if self.unbalanced:
            raise ValidationError("outcome_array requires balanced data")
        sids = {s: i for i, s in enumerate(self.subject_ids)}
        widx = {w: j for j, w in enumerate(self.design.weights)}
        out = np.empty((len(sids), self.design.n_conditions, self.design.trials_per_condition))
        for r in self.records:
            out[sids[r.subject_id], widx[r.condition_weight], r.trial_index - 1] = r.outcome
        return out

    @classmethod
    def from_array(cls, y: np.ndarray, design: DesignSpec, subject_ids: Sequence[str] | None = None) -> "Dataset":
        """Build a balanced dataset from an array of shape (subjects, conditions, trials)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            y = y[None]
        n, J, T = y.shape
        if J != design.n_conditions or T != design.trials_per_condition:
            raise ValidationError(f"array shape {y.shape} does not match design {design}")
        if subject_ids is None:
            subject_ids = [f"s{i + 1}" for i in range(n)]
        recs = [
            TrialRecord(str(subject_ids[i]), design.weights[j], t + 1, float(y[i, j, t]))
            for i in range(n)
            for j in range(J)
            for t in range(T)
        ]
        return cls(tuple(recs), design)


@dataclass(frozen=True)
class ModelParams:
    """One parameter draw: grand intercept, slope and three variance components."""

    a: float
    beta_pop: float
    var_alpha: float
    var_u: float
    var_eps: float

    def __post_init__(self):
        if min(self.var_alpha, self.var_u, self.var_eps) < 0:
            raise ValidationError("variance components must be nonnegative")

    @classmethod
    def from_sds(cls, a, beta_pop, sd_alpha, sd_u, sd_eps) -> "ModelParams":
        return cls(a, beta_pop, sd_alpha**2, sd_u**2, sd_eps**2)


@dataclass(frozen=True)
class PriorConfig:
    """Inverse-gamma shape/scale pairs for the intercept and subject-weight variances."""

    eta: float = 5.0
    nu: float = 1.0
    eta_u: float = 2.0
    nu_u: float = 0.01

    def __post_init__(self):
        if not self.eta > 1 or not self.eta_u > 1:
            raise ValidationError("inverse-gamma shapes must exceed 1 so the prior mean exists")
        if not self.nu > 0 or not self.nu_u > 0:
            raise ValidationError("inverse-gamma scales must be positive")

    @property
    def var_alpha_prior_mean(self) -> float:
        return self.nu / (self.eta - 1)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    chains: int = 3
    draws_per_chain: int = 2000
    burn_in: int = 1000
    template_draws: int = 3000
    test_level: float = 0.05
    benchmark: str = "mean"  # "mean" or "median" of the slope draws

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.chains < 1 or self.draws_per_chain < 1 or self.template_draws < 1:
            raise ValidationError("chains, draws_per_chain and template_draws must be positive")
        if not 0 <= self.burn_in < self.draws_per_chain:
            raise ValidationError("burn_in must be nonnegative and below draws_per_chain")
        if not 0 < self.test_level < 1:
            raise ValidationError("test_level must lie in (0, 1)")
        if self.benchmark not in ("mean", "median"):
            raise ValidationError("benchmark must be 'mean' or 'median'")

    @property
    def kept_draws(self) -> int:
        return self.chains * (self.draws_per_chain - self.burn_in)


def _parse_bool(text: str, lineno: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValidationError(f"line {lineno}: plfr_log must be true or false, got {text!r}")


def ingest_csv(path: str | Path, declared_design: DesignSpec | None = None) -> Dataset:
    """Read a trial CSV (``subject_id,weight_grams,trial,plfr,plfr_log``).

    Lines starting with ``#`` are ignored.  Raw PLFR values are log-transformed
    when ``plfr_log`` is false.  Without ``declared_design`` the layout is
    inferred from the distinct weights and the largest trial index.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [(i + 1, ln) for i, ln in enumerate(fh) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: empty file")
    reader = csv.reader([ln for _, ln in lines])
    header = [h.strip() for h in next(reader)]
    if tuple(header) != CSV_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {','.join(header)}")

    records = []
    for (lineno, _), row in zip(lines[1:], reader):
        if len(row) != len(CSV_COLUMNS):
            raise ValidationError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        sid, wg, trial, plfr, is_log = (c.strip() for c in row)
        try:
            wg_f = float(wg)
            trial_i = int(trial)
            val = float(plfr)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if not wg_f > 0:
            raise ValidationError(f"{path}:{lineno}: nonpositive weight {wg_f}")
        if not sid:
            raise ValidationError(f"{path}:{lineno}: empty subject_id")
        if not _parse_bool(is_log, lineno):
            if not val > 0:
                raise ValidationError(f"{path}:{lineno}: raw PLFR must be positive to take logs, got {val}")
            val = math.log(val)
        try:
            records.append(TrialRecord(sid, _kg(wg_f), trial_i, val))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc

    keys = Counter((r.subject_id, r.condition_weight, r.trial_index) for r in records)
    for (sid, w, t), c in keys.items():
        if c > 1:
            raise ValidationError(f"{path}: duplicate entry for subject {sid!r}, {_grams(w):g} g, trial {t}")

    if declared_design is None:
        weights = tuple(sorted({r.condition_weight for r in records}))
        T = max(r.trial_index for r in records)
        declared_design = DesignSpec(weights, T)
    return Dataset(tuple(records), declared_design)


def write_csv(dataset: Dataset, path: str | Path, header_comment: str | None = None) -> None:
    """Write records with log-scale outcomes (``plfr_log=true``)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in dataset.records:
            w.writerow([r.subject_id, f"{_grams(r.condition_weight):g}", r.trial_index, repr(r.outcome), "true"])


def validate_test_design(train: DesignSpec, test: DesignSpec) -> list[str]:
    """Warnings for a test design relative to the training design (never raises)."""
    warnings = []
    lo, hi = min(train.weights), max(train.weights)
    outside = [w for w in test.weights if w < lo or w > hi]
    if outside:
        grams = ", ".join(f"{_grams(w):g}" for w in outside)
        warnings.append(
            f"extrapolation: test weights {grams} g fall outside the training range "
            f"{_grams(lo):g}-{_grams(hi):g} g"
        )
    if test.trials_per_condition == 1:
        warnings.append("no replication: the test design has a single trial per condition")
    return warnings


_CONFIG_FIELDS = {f.name: (RunConfig, f) for f in fields(RunConfig)}
_CONFIG_FIELDS.update({f.name: (PriorConfig, f) for f in fields(PriorConfig)})


def load_config(path: str | Path, run: RunConfig | None = None,
                priors: PriorConfig | None = None) -> tuple[RunConfig, PriorConfig]:
    """Read a flat ``key=value`` file whose keys are RunConfig/PriorConfig field names."""
    run = run or RunConfig()
    priors = priors or PriorConfig()
    run_kw, prior_kw = {}, {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        owner, f = _CONFIG_FIELDS[key]
        target = run_kw if owner is RunConfig else prior_kw
        try:
            if f.type in ("int", int):
                target[key] = int(val)
            elif f.type in ("float", float):
                target[key] = float(val)
            else:
                target[key] = val
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return replace(run, **run_kw), replace(priors, **prior_kw)
