"""Clinic-side decisions against a template: p-values, power and the chart."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, ValidationError, _grams
from .estimator import naive_slope, slope_ci
from .template import MIN_DECISION_DRAWS, TemplateDistribution, critical_value

__all__ = [
    "Decision",
    "AssessmentReport",
    "ChartRow",
    "CHART_COLUMNS",
    "p_value",
    "assess",
    "fnr_by_overlap",
    "error_rate_interval",
    "physician_chart",
    "write_chart_csv",
    "format_chart",
]

CHART_COLUMNS = ("condition", "subject", "assessment", "scaling_factor", "delta", "p_value", "power")


class Decision(str, enum.Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"


@dataclass(frozen=True)
class AssessmentReport:
    subject_id: str
    decision: Decision
    scaling_factor: float
    delta_hat: float
    p_value: float
    post_hoc_power: float
    level: float
    ci: tuple[float, float]
    critical_value: float
    template_ref: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def _require_null(t: TemplateDistribution) -> None:
    if not t.is_null:
        raise ValidationError("a null (unshifted) template is required")


def p_value(t: TemplateDistribution, beta_bar: float) -> float:
    """One-sided Monte Carlo p-value ``(1 + #{values <= beta_bar}) / (M + 1)``."""
    _require_null(t)
    count = int(np.searchsorted(t.sorted_values, beta_bar, side="right"))
    return (1 + count) / (t.M + 1)


def fnr_by_overlap(t_null: TemplateDistribution, delta_alt: float, level: float) -> float:
    """Share of the shifted template at or above the null critical value."""
    _require_null(t_null)
    if delta_alt < 0:
        raise ValidationError("delta_alt must be nonnegative")
    c = critical_value(t_null, level)
    return float(np.mean(t_null.values - delta_alt >= c))


def error_rate_interval(templates: Sequence[TemplateDistribution], delta_alt: float,
                        level: float) -> tuple[float, float]:
    """Mean FNR over replicate templates and the spread of a single template's FNR.

    The second value is the sample standard deviation across templates,
    i.e. the standard error attached to the FNR quoted by any one template.
    """
    if len(templates) < 2:
        raise ValidationError("need at least two templates")
    fnr = np.array([fnr_by_overlap(t, delta_alt, level) for t in templates])
    # centring on one entry keeps the spread exactly 0 for identical templates
    return float(fnr.mean()), float((fnr - fnr[0]).std(ddof=1))


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")


def assess(t: TemplateDistribution, subject_trials: Dataset, level: float = 0.05,
           n_boot: int = 2000, seed: int = 0) -> AssessmentReport:
    """Decision, p-value, post-hoc power and slope interval for one subject."""
    _require_null(t)
    _check_level(level)
    if len(subject_trials.subject_ids) != 1:
        raise ValidationError("assess takes exactly one subject")
    sid = subject_trials.subject_ids[0]
    groups = subject_trials.condition_groups()
    weights = tuple(groups)
    if weights != t.design.weights:
        got = ", ".join(f"{_grams(w):g}" for w in weights)
        want = ", ".join(f"{g:g}" for g in t.design.weights_grams)
        raise ValidationError(f"subject {sid!r} weights ({got} g) do not match the template design ({want} g)")

    notes = []
    counts = sorted({y.size for y in groups.values()})
    if counts != [t.design.trials_per_condition]:
        notes.append(f"trial counts {counts} differ from the template design's "
                     f"{t.design.trials_per_condition} per condition")
    if t.M < MIN_DECISION_DRAWS:
        notes.append(f"template has only {t.M} values")
    if not math.isclose(level * t.M, round(level * t.M), abs_tol=1e-9):
        notes.append("level * M is not an integer; p-value and critical value may disagree at the boundary")

    beta_bar = naive_slope(subject_trials).value
    p = p_value(t, beta_bar)
    delta_hat = t.benchmark_slope - beta_bar
    power = 1.0 - fnr_by_overlap(t, max(delta_hat, 0.0), level)
    try:
        ci = slope_ci(subject_trials, 0.95, n_boot, seed)
    except ValidationError as exc:
        ci = (float("nan"), float("nan"))
        notes.append(f"no slope interval: {exc}")
    ref = {k: t.provenance.get(k) for k in ("created_utc", "seed") if k in t.provenance}
    ref["design"] = str(t.design)
    return AssessmentReport(
        subject_id=sid,
        decision=Decision.ABNORMAL if p < level else Decision.NORMAL,
        scaling_factor=beta_bar,
        delta_hat=delta_hat,
        p_value=p,
        post_hoc_power=power,
        level=level,
        ci=ci,
        critical_value=critical_value(t, level),
        template_ref=ref,
        warnings=tuple(notes),
    )


@dataclass(frozen=True)
class ChartRow:
    condition: str
    subject_id: str
    report: AssessmentReport | None  # None marks a subject without this condition

    @property
    def available(self) -> bool:
        return self.report is not None


def physician_chart(templates: Mapping[str, TemplateDistribution],
                    subjects: Dataset | Mapping[str, Dataset], level: float = 0.10,
                    n_boot: int = 2000, seed: int = 0) -> list[ChartRow]:
    """One row per condition and subject; subjects lacking a condition get an N/A row.

    ``subjects`` is either one dataset, split across conditions by each
    template's weights, or a mapping from condition name to its dataset.
    """
    _check_level(level)
    if isinstance(subjects, Dataset):
        if subjects.n_records == 0:
            return []
        owner: dict[float, str] = {}
        for name, t in templates.items():
            for w in t.design.weights:
                if w in owner:
                    raise ValidationError(
                        f"conditions {owner[w]!r} and {name!r} share {_grams(w):g} g; "
                        "pass one dataset per condition instead"
                    )
                owner[w] = name
        stray = {r.condition_weight for r in subjects.records} - set(owner)
        if stray:
            raise ValidationError(f"weights {[_grams(w) for w in sorted(stray)]} g match no template")
        order = subjects.subject_ids
        per = {name: subjects.restrict_weights(t.design.weights) for name, t in templates.items()}
    else:
        per = dict(subjects)
        order = list(dict.fromkeys(s for ds in per.values() for s in ds.subject_ids))

    rows = []
    for name, t in templates.items():
        ds = per.get(name)
        present = set(ds.subject_ids) if ds is not None else set()
        for sid in order:
            if sid not in present:
                rows.append(ChartRow(name, sid, None))
                continue
            rows.append(ChartRow(name, sid, assess(t, ds.for_subject(sid), level, n_boot, seed)))
    return rows


def _row_fields(row: ChartRow, fmt) -> list[str]:
    r = row.report
    if r is None:
        return [row.condition, row.subject_id, "N/A", "", "", "", ""]
    return [row.condition, row.subject_id, r.decision.value, fmt(r.scaling_factor), fmt(r.delta_hat),
            fmt(r.p_value), fmt(r.post_hoc_power)]


def write_chart_csv(rows: Sequence[ChartRow], path: str | Path | None = None,
                    header_comment: str | None = None) -> str:
    """Chart as CSV text (full precision); also written to ``path`` if given."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHART_COLUMNS)
    for row in rows:
        w.writerow(_row_fields(row, repr))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def format_chart(rows: Sequence[ChartRow]) -> str:
    """Aligned text table with three decimals, ``--`` in N/A rows."""
    table = [list(CHART_COLUMNS)]
    for row in rows:
        cells = _row_fields(row, lambda x: f"{x:.3f}")
        table.append([c if c else "--" for c in cells])
    widths = [max(len(r[i]) for r in table) for i in range(len(CHART_COLUMNS))]
    lines = ["  ".join(c.rjust(wd) if i >= 3 else c.ljust(wd) for i, (c, wd) in enumerate(zip(r, widths)))
             for r in table]
    return "\n".join(lines) + "\n"
