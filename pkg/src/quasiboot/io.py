"""CSV ingestion and report serialisation (text, JSON, CSV)."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .bootstrap import CoefficientInference, InferenceReport
from .exceptions import IngestError
from .model_core import Y_SLACK, ModelSpec, ObservationTable

MISSING = {"", "na", "nan", "null", "none"}


def _is_missing(v):
    return v.strip().lower() in MISSING


def ingest_csv(path, spec: ModelSpec, extra_factors=()) -> ObservationTable:
    """Read a UTF-8 CSV with a header row into an :class:`ObservationTable`.

    Only the columns named by ``spec`` are read, plus any
    ``extra_factors`` (grouping columns used for resampling only). Row
    numbers in error messages count data rows from 1.

    Raises
    ------
    IngestError
        Missing columns or values, non-numeric covariates, or a response
        outside ``[0, 1]`` by more than the snapping slack.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise IngestError(f"{path}: file is empty") from None
            records = [r for r in reader if any(c.strip() for c in r)]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path}: not valid UTF-8") from exc
    if not records:
        raise IngestError(f"{path}: no data rows")

    numeric = [spec.response, *spec.fixed_columns[1:]]
    factor_cols = list(dict.fromkeys([*spec.random_intercept_factors, *extra_factors]))
    wanted = numeric + factor_cols
    missing_cols = [c for c in wanted if c not in header]
    if missing_cols:
        raise IngestError(f"{path}: missing column(s) {missing_cols}")
    col = {c: header.index(c) for c in wanted}

    bad_rows = [
        i for i, r in enumerate(records, start=1)
        if len(r) < len(header) or any(_is_missing(r[col[c]]) for c in wanted)
    ]
    if bad_rows:
        raise IngestError(f"{path}: missing values in rows {bad_rows[:20]}")

    values = {}
    for c in numeric:
        out = np.empty(len(records))
        for i, r in enumerate(records, start=1):
            try:
                out[i - 1] = float(r[col[c]])
            except ValueError:
                raise IngestError(
                    f"{path}: non-numeric value {r[col[c]]!r} in column {c!r}, row {i}"
                ) from None
            if not math.isfinite(out[i - 1]):
                raise IngestError(f"{path}: non-finite value in column {c!r}, row {i}")
        values[c] = out

    y = values[spec.response]
    bad = np.flatnonzero((y < -Y_SLACK) | (y > 1 + Y_SLACK))
    if bad.size:
        rows = (bad + 1).tolist()
        raise IngestError(
            f"{path}: response {spec.response!r} outside [0, 1] in row {rows[0]}"
            + (f" (and {len(rows) - 1} more)" if len(rows) > 1 else "")
        )
    covs = np.column_stack([values[c] for c in spec.fixed_columns[1:]]) if len(numeric) > 1 \
        else np.empty((len(records), 0))
    factors = {
        name: [r[col[name]].strip() for r in records] for name in factor_cols
    }
    return ObservationTable.from_arrays(
        np.clip(y, 0.0, 1.0), covs, spec.fixed_columns[1:], factors
    )


REPORT_FIELDS = [
    "coefficient", "estimate", "exp_estimate", "base_se", "ci_lower", "ci_upper",
    "p_value", "granularity_limited", "q_lower", "q_upper", "n_t",
]


def _row_values(r: CoefficientInference, has_boot):
    """Report columns for one coefficient; bootstrap columns are None without a bootstrap."""
    b = has_boot
    return {
        "coefficient": r.name,
        "estimate": r.estimate,
        "exp_estimate": r.exp_estimate,
        "base_se": r.base_se,
        "ci_lower": r.ci_lower if b else None,
        "ci_upper": r.ci_upper if b else None,
        "p_value": r.p_value if b else None,
        "granularity_limited": r.granularity_limited if b else None,
        "q_lower": r.q_lower if b else None,
        "q_upper": r.q_upper if b else None,
        "n_t": r.n_t if b else None,
    }


def report_to_json(report: InferenceReport):
    doc = {
        "alpha": report.alpha,
        "R": report.R,
        "R_effective": report.R_effective,
        "n_failed": report.n_failed,
        "has_bootstrap": report.has_bootstrap,
        "coefficients": [_row_values(r, report.has_bootstrap) for r in report.rows],
    }
    return json.dumps(doc, indent=2)


def _nan(v):
    return float("nan") if v is None else float(v)


def report_from_json(text) -> InferenceReport:
    doc = json.loads(text)
    rows = tuple(
        CoefficientInference(
            c["coefficient"], c["estimate"], c["exp_estimate"], c["base_se"],
            _nan(c["ci_lower"]), _nan(c["ci_upper"]), _nan(c["p_value"]),
            _nan(c["q_lower"]), _nan(c["q_upper"]), int(c["n_t"] or 0),
        )
        for c in doc["coefficients"]
    )
    return InferenceReport(rows, doc["alpha"], doc["R"], doc["R_effective"], doc["n_failed"],
                           doc["has_bootstrap"])


def report_to_csv(report: InferenceReport):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS + ["n_failed", "alpha"], lineterminator="\n")
    w.writeheader()
    for r in report.rows:
        vals = _row_values(r, report.has_bootstrap)
        vals = {k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                for k, v in vals.items()}
        vals["n_failed"] = report.n_failed
        vals["alpha"] = repr(report.alpha)
        w.writerow(vals)
    return buf.getvalue()


def report_from_csv(text, R=0, R_effective=0) -> InferenceReport:
    rows = list(csv.DictReader(io.StringIO(text)))

    def num(v):
        return float("nan") if v == "" else float(v)

    out = tuple(
        CoefficientInference(
            r["coefficient"], float(r["estimate"]), float(r["exp_estimate"]),
            float(r["base_se"]), num(r["ci_lower"]), num(r["ci_upper"]), num(r["p_value"]),
            num(r["q_lower"]), num(r["q_upper"]), int(r["n_t"] or 0),
        )
        for r in rows
    )
    has_boot = bool(rows) and rows[0]["ci_lower"] != ""
    n_failed = int(rows[0]["n_failed"]) if rows else 0
    alpha = float(rows[0]["alpha"]) if rows else 0.05
    return InferenceReport(out, alpha, R, R_effective, n_failed, has_boot)


def _fmt(v, spec=".4f"):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(v, spec)


def report_to_text(report: InferenceReport, random_effects=()):
    level = 100 * (1 - report.alpha)
    header = ["coefficient", "estimate", "exp(est)", "base SE",
              f"{level:g}% CI lower", f"{level:g}% CI upper", "boot p"]
    lines = []
    for r in report.rows:
        p = ""
        if report.has_bootstrap:
            p = _fmt(r.p_value) + (" *" if r.granularity_limited else "")
        lines.append([r.name, _fmt(r.estimate), _fmt(r.exp_estimate), _fmt(r.base_se),
                      _fmt(r.ci_lower) if report.has_bootstrap else "",
                      _fmt(r.ci_upper) if report.has_bootstrap else "", p])
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    out += ["  ".join(c.rjust(w) for c, w in zip(l, widths)) for l in lines]
    if report.has_bootstrap:
        out.append("")
        out.append(f"bootstrap-t intervals from {report.R_effective} of {report.R} resamples "
                   f"({report.n_failed} failed)")
        if any(r.granularity_limited for r in report.rows):
            out.append("* p < 0.05: limited by resample granularity, treat as 'below 0.05'")
    else:
        out.append("")
        out.append("no bootstrap run: base standard errors only (conservative)")
    for re_ in random_effects:
        flag = " (boundary)" if re_.at_boundary else ""
        out.append(f"random intercept {re_.factor}: variance {re_.variance:.4f}{flag}")
    return "\n".join(out) + "\n"


def render(report: InferenceReport, fmt="text", random_effects=()):
    if fmt == "text":
        return report_to_text(report, random_effects)
    if fmt == "json":
        return report_to_json(report)
    if fmt == "csv":
        return report_to_csv(report)
    raise ValueError(f"unknown format {fmt!r}")
