"""Long-format trial data: validation, CSV/JSON ingestion and export.

Data are held column-wise in read-only numpy arrays. Rows are stored grouped
by subject (subjects in first-appearance order) and sorted by visit number
within subject, so every consumer sees the same canonical layout no matter
how the input rows were ordered.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyData, InvariantViolation, MissingColumn, ParseError

VERSIONS = ("A", "B", "C")
CANONICAL_COLUMNS = ("id", "arm", "visit", "target_month", "month", "version", "y")
MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class Observation:
    subject_id: object
    arm: int
    visit_no: int
    target_month: float
    actual_month: float
    version: str
    covariates: Mapping[str, float]
    outcome: float | None


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TrialData:
    """Validated, immutable long-format trial data.

    Args:
        subject_id: per-row subject identifiers (any hashable values).
        arm: per-row arm, 0 = placebo, 1 = active.
        visit: per-row protocol visit number (1 = baseline).
        target_month: scheduled month of the visit.
        month: actual month from baseline.
        version: cognitive test version label per row ("A", "B" or "C").
        y: outcome, NaN where missing.
        covariates: mapping of covariate name to per-row values.
        row_labels: labels used in error messages (defaults to 1-based index).
    """

    def __init__(self, subject_id, arm, visit, target_month, month, version, y,
                 covariates: Mapping[str, Sequence[float]] | None = None,
                 row_labels=None):
        n = len(subject_id)
        covariates = dict(covariates or {})
        cols = {
            "arm": np.asarray(arm, dtype=float),
            "visit": np.asarray(visit, dtype=float),
            "target_month": np.asarray(target_month, dtype=float),
            "month": np.asarray(month, dtype=float),
            "y": np.asarray(y, dtype=float),
        }
        for name, col in cols.items():
            if col.shape != (n,):
                raise InvariantViolation(f"column {name!r} has length {col.shape}, expected {n}")
        version = np.asarray([str(v) for v in version], dtype=object)
        cov = {}
        for name, col in covariates.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise InvariantViolation(f"covariate {name!r} has wrong length")
            cov[name] = col
        labels = np.arange(1, n + 1) if row_labels is None else np.asarray(row_labels)
        if n == 0:
            raise EmptyData("no observations")

        _validate(np.asarray(subject_id, dtype=object), cols, version, cov, labels)

        codes, uniques = pd.factorize(pd.Series(np.asarray(subject_id, dtype=object)), sort=False)
        order = np.lexsort((cols["visit"], codes))
        self._subject_id = _frozen(np.asarray(subject_id, dtype=object)[order])
        self._subject_code = _frozen(codes[order].astype(np.int64))
        self._subjects = tuple(uniques)
        self._arm = _frozen(cols["arm"][order].astype(np.int64))
        self._visit = _frozen(cols["visit"][order].astype(np.int64))
        self._target_month = _frozen(cols["target_month"][order])
        self._month = _frozen(cols["month"][order])
        self._version = _frozen(version[order])
        self._y = _frozen(cols["y"][order])
        self._covariates = {k: _frozen(v[order]) for k, v in cov.items()}
        self.covariate_names = tuple(cov)

    # column accessors -------------------------------------------------
    subject_id = property(lambda self: self._subject_id)
    subject_code = property(lambda self: self._subject_code)
    arm = property(lambda self: self._arm)
    visit = property(lambda self: self._visit)
    target_month = property(lambda self: self._target_month)
    month = property(lambda self: self._month)
    version = property(lambda self: self._version)
    y = property(lambda self: self._y)

    def covariate(self, name):
        return self._covariates[name]

    @property
    def subjects(self):
        return self._subjects

    @property
    def n_obs(self):
        return len(self._y)

    @property
    def n_subjects(self):
        return len(self._subjects)

    @property
    def n_missing(self):
        return int(np.isnan(self._y).sum())

    @property
    def observations(self):
        out = []
        for i in range(self.n_obs):
            y = self._y[i]
            out.append(Observation(
                subject_id=self._subject_id[i],
                arm=int(self._arm[i]),
                visit_no=int(self._visit[i]),
                target_month=float(self._target_month[i]),
                actual_month=float(self._month[i]),
                version=str(self._version[i]),
                covariates={k: float(v[i]) for k, v in self._covariates.items()},
                outcome=None if math.isnan(y) else float(y),
            ))
        return tuple(out)

    def __len__(self):
        return self.n_obs

    def __repr__(self):
        return (f"TrialData(n_obs={self.n_obs}, n_subjects={self.n_subjects}, "
                f"covariates={list(self.covariate_names)})")

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return TrialData(
            self._subject_id[mask], self._arm[mask], self._visit[mask],
            self._target_month[mask], self._month[mask], self._version[mask],
            self._y[mask], {k: v[mask] for k, v in self._covariates.items()},
        )

    def with_outcome(self, y):
        """Copy with the outcome column replaced (rows in canonical order)."""
        return TrialData(
            self._subject_id, self._arm, self._visit, self._target_month,
            self._month, self._version, y, self._covariates,
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "id": self._subject_id, "arm": self._arm, "visit": self._visit,
            "target_month": self._target_month, "month": self._month,
            "version": self._version, "y": self._y,
        })
        for k, v in self._covariates.items():
            df[k] = v
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, covariates: Iterable[str] | None = None):
        if covariates is None:
            covariates = [c for c in df.columns if c not in CANONICAL_COLUMNS]
        missing = [c for c in list(CANONICAL_COLUMNS) + list(covariates) if c not in df.columns]
        if missing:
            raise MissingColumn(f"missing columns: {missing}")
        return cls(df["id"].to_numpy(), df["arm"].to_numpy(), df["visit"].to_numpy(),
                   df["target_month"].to_numpy(), df["month"].to_numpy(),
                   df["version"].to_numpy(), df["y"].to_numpy(),
                   {c: df[c].to_numpy() for c in covariates})

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], covariate_names=()):
        obs = list(observations)
        return cls(
            [o.subject_id for o in obs], [o.arm for o in obs], [o.visit_no for o in obs],
            [o.target_month for o in obs], [o.actual_month for o in obs],
            [o.version for o in obs],
            [np.nan if o.outcome is None else o.outcome for o in obs],
            {name: [o.covariates[name] for o in obs] for name in covariate_names},
        )

    def equals(self, other: "TrialData") -> bool:
        if self.covariate_names != other.covariate_names or self.n_obs != other.n_obs:
            return False
        same = (
            list(self._subject_id) == list(other._subject_id)
            and np.array_equal(self._arm, other._arm)
            and np.array_equal(self._visit, other._visit)
            and np.array_equal(self._target_month, other._target_month)
            and np.array_equal(self._month, other._month)
            and list(self._version) == list(other._version)
            and np.array_equal(self._y, other._y, equal_nan=True)
        )
        return same and all(np.array_equal(self._covariates[k], other._covariates[k])
                            for k in self.covariate_names)


def _validate(sid, cols, version, cov, labels):
    arm, visit, month = cols["arm"], cols["visit"], cols["month"]

    def fail(mask, message):
        idx = np.flatnonzero(mask)
        if idx.size:
            raise InvariantViolation(message, row=labels[idx[0]])

    fail(~np.isin(arm, (0, 1)), "arm must be 0 or 1")
    fail(~np.isfinite(visit) | (visit < 1) | (visit != np.round(visit)),
         "visit must be an integer >= 1")
    fail(~np.isfinite(cols["target_month"]), "target_month must be finite")
    fail(~np.isfinite(month) | (month < 0), "month must be finite and >= 0")
    fail(~np.isin(version, VERSIONS), "version must be one of A, B, C")
    fail((visit == 1) & (month != 0), "baseline visit must have month 0")
    fail((visit != 1) & (month == 0), "only the baseline visit may have month 0")
    fail(np.isinf(cols["y"]), "outcome must be finite or missing")
    for name, col in cov.items():
        fail(~np.isfinite(col), f"covariate {name!r} must be finite")

    frame = pd.DataFrame({"sid": sid, "visit": visit, "month": month, "arm": arm,
                          "row": np.arange(len(sid))})
    dup = frame.duplicated(["sid", "visit"], keep="first").to_numpy()
    fail(dup, "duplicate (subject, visit) pair")
    frame["code"] = pd.factorize(frame["sid"])[0]
    ordered = frame.sort_values(["code", "visit"], kind="stable")
    same_subject = np.diff(ordered["code"].to_numpy()) == 0
    not_increasing = same_subject & (np.diff(ordered["month"].to_numpy()) <= 0)
    if not_increasing.any():
        bad = ordered["row"].to_numpy()[1:][not_increasing][0]
        raise InvariantViolation("month must increase with visit within subject", row=labels[bad])
    arms = frame.groupby("sid", sort=False)["arm"].nunique()
    if (arms > 1).any():
        bad_sid = arms.index[arms.to_numpy() > 1][0]
        bad = frame.loc[frame["sid"] == bad_sid, "row"].iloc[0]
        raise InvariantViolation(f"subject {bad_sid!r} has more than one arm", row=labels[bad])


def complete_cases(data: TrialData) -> TrialData:
    """Drop rows with a missing outcome."""
    keep = ~np.isnan(data.y)
    if not keep.any():
        raise EmptyData("no non-missing outcomes")
    if keep.all():
        return data
    return data.subset(keep)


# CSV / JSON -------------------------------------------------------------

def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, text) from None
    if not math.isfinite(value):
        raise ParseError(row, column, text)
    return value


def load_csv(path, schema: Mapping[str, str] | None = None,
             covariates: Sequence[str] | None = None) -> TrialData:
    """Read a long-format CSV file.

    ``schema`` maps canonical column names (``id, arm, visit, target_month,
    month, version, y``) to the names used in the file. Unless ``covariates``
    is given, every column not claimed by the schema is read as a covariate.
    Outcomes may be blank or ``NA``; all other fields are required.
    """
    schema = {c: c for c in CANONICAL_COLUMNS} | dict(schema or {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("file is empty") from None
        pos = {name: i for i, name in enumerate(header)}
        for canon, col in schema.items():
            if col not in pos:
                raise MissingColumn(f"column {col!r} (for {canon!r}) not found")
        claimed = set(schema.values())
        if covariates is None:
            covariates = [h for h in header if h not in claimed]
        for c in covariates:
            if c not in pos:
                raise MissingColumn(f"covariate column {c!r} not found")

        sid, arm, visit, target, month, version, y, rows = [], [], [], [], [], [], [], []
        cov = {c: [] for c in covariates}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(lineno, "*", f"{len(rec)} fields, expected {len(header)}")
            get = lambda canon: rec[pos[schema[canon]]].strip()  # noqa: E731
            sid.append(get("id"))
            a = get("arm")
            if a not in ("0", "1", "0.0", "1.0"):
                raise ParseError(lineno, schema["arm"], a)
            arm.append(int(float(a)))
            v = _parse_float(get("visit"), lineno, schema["visit"])
            if v != int(v):
                raise ParseError(lineno, schema["visit"], get("visit"))
            visit.append(int(v))
            target.append(_parse_float(get("target_month"), lineno, schema["target_month"]))
            month.append(_parse_float(get("month"), lineno, schema["month"]))
            ver = get("version")
            if ver not in VERSIONS:
                raise ParseError(lineno, schema["version"], ver)
            version.append(ver)
            yt = get("y")
            y.append(np.nan if yt in MISSING_TOKENS else _parse_float(yt, lineno, schema["y"]))
            for c in covariates:
                ct = rec[pos[c]].strip()
                if ct in MISSING_TOKENS:
                    raise ParseError(lineno, c, ct)
                cov[c].append(_parse_float(ct, lineno, c))
            rows.append(lineno)
    if not rows:
        raise EmptyData(f"{path}: no data rows")
    # ids that all look like integers are kept as int so they round-trip
    # with simulated data
    if all(s.lstrip("-").isdigit() for s in sid):
        sid = [int(s) for s in sid]
    return TrialData(sid, arm, visit, target, month, version, y, cov, row_labels=rows)


def write_csv(data: TrialData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(CANONICAL_COLUMNS) + list(data.covariate_names))
        covs = [data.covariate(c) for c in data.covariate_names]
        for i in range(data.n_obs):
            y = data.y[i]
            w.writerow([data.subject_id[i], int(data.arm[i]), int(data.visit[i]),
                        repr(float(data.target_month[i])), repr(float(data.month[i])),
                        data.version[i], "NA" if math.isnan(y) else repr(float(y))]
                       + [repr(float(c[i])) for c in covs])


def to_json(data: TrialData) -> str:
    rows = []
    for o in data.observations:
        row = {"id": o.subject_id, "arm": o.arm, "visit": o.visit_no,
               "target_month": o.target_month, "month": o.actual_month,
               "version": o.version, "y": o.outcome}
        row.update(o.covariates)
        rows.append(row)
    return json.dumps({"covariates": list(data.covariate_names), "observations": rows},
                      default=_json_default)


def from_json(text: str) -> TrialData:
    doc = json.loads(text)
    df = pd.DataFrame(doc["observations"])
    df["y"] = df["y"].astype(float)
    return TrialData.from_frame(df, doc["covariates"])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))
