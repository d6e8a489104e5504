"""Long-format longitudinal data: loading, validation, standardization."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class ColumnSchema:
    """Column naming for long-format CSV input.

    If ``covariates`` is None, every column other than subject/time/response
    is treated as a covariate, in file order.
    """
    subject: str = "subject"
    time: str = "time"
    response: str = "y"
    covariates: tuple[str, ...] | None = None


@dataclass(frozen=True)
class LongitudinalDataset:
    """Clustered observations stored as per-subject blocks.

    Subjects are kept in first-appearance order; within each subject rows are
    sorted by strictly increasing time. Arrays are read-only after
    construction, so datasets can be shared freely across workers.
    """
    subjects: tuple
    times: tuple          # per subject: float array of length T_i
    y: tuple              # per subject: response vector of length T_i
    X: tuple              # per subject: (T_i, p) covariate matrix
    covariate_names: tuple

    def __post_init__(self):
        if len(self.subjects) == 0:
            raise ValueError("dataset has no subjects")
        if len({len(self.subjects), len(self.times), len(self.y), len(self.X)}) != 1:
            raise ValueError("per-subject block lists have mismatched lengths")
        p = self.X[0].shape[1]
        if p < 1:
            raise ValueError("at least one covariate column is required")
        for sid, t, yi, Xi in zip(self.subjects, self.times, self.y, self.X):
            if Xi.shape[1] != p:
                raise ValueError(f"subject {sid!r}: inconsistent covariate count")
            Ti = len(yi)
            if Ti < 1 or Xi.shape[0] != Ti or len(t) != Ti:
                raise ValueError(f"subject {sid!r}: block shapes disagree")
            if Ti > 1 and not np.all(np.diff(t) > 0):
                raise ValueError(f"subject {sid!r}: times not strictly increasing")
            if not (np.all(np.isfinite(yi)) and np.all(np.isfinite(Xi))):
                raise ValueError(f"subject {sid!r}: missing or non-finite value")
            for a in (t, yi, Xi):
                a.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.X[0].shape[1]

    @property
    def N(self) -> int:
        return sum(len(yi) for yi in self.y)

    @property
    def cluster_sizes(self):
        return [len(yi) for yi in self.y]

    @cached_property
    def stacked_y(self) -> np.ndarray:
        out = np.concatenate(self.y)
        out.setflags(write=False)
        return out

    @cached_property
    def stacked_X(self) -> np.ndarray:
        out = np.vstack(self.X)
        out.setflags(write=False)
        return out

    @cached_property
    def unit_variance_deviation(self) -> float:
        """Largest deviation of pooled column variances from 1."""
        return float(np.max(np.abs(self.stacked_X.var(axis=0) - 1.0)))

    def cluster_view(self, i: int):
        """Return (y_i, X_i, T_i) for subject index ``i``."""
        if not (0 <= i < self.n):
            raise IndexError(f"subject index {i} out of range [0, {self.n})")
        return self.y[i], self.X[i], len(self.y[i])

    def drop_subject(self, i: int) -> "LongitudinalDataset":
        """Dataset with subject index ``i`` removed (for CV folds)."""
        if not (0 <= i < self.n):
            raise IndexError(f"subject index {i} out of range [0, {self.n})")
        keep = [j for j in range(self.n) if j != i]
        return LongitudinalDataset(
            subjects=tuple(self.subjects[j] for j in keep),
            times=tuple(self.times[j] for j in keep),
            y=tuple(self.y[j] for j in keep),
            X=tuple(self.X[j] for j in keep),
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class ScalingInfo:
    """Pooled location/scale used to standardize a dataset.

    Variances use the population convention (divisor N) so standardized
    columns have exactly unit pooled variance. When the response was left
    unscaled (binomial workflows) ``y_center=0`` and ``y_scale=1``.
    """
    x_center: np.ndarray
    x_scale: np.ndarray
    y_center: float
    y_scale: float

    def __post_init__(self):
        if np.any(self.x_scale <= 0) or self.y_scale <= 0:
            raise ValueError("all scales must be strictly positive")

    def coefficients_original_scale(self, beta_std: np.ndarray):
        """Map standardized-scale coefficients back to the original scale.

        Returns (beta_original, intercept).
        """
        beta = np.asarray(beta_std, dtype=float) * (self.y_scale / self.x_scale)
        intercept = self.y_center - float(beta @ self.x_center)
        return beta, intercept


def from_arrays(subject_ids, times, y, X, covariate_names=None) -> LongitudinalDataset:
    """Build a dataset from flat arrays (one row per observation)."""
    subject_ids = np.asarray(subject_ids)
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len({len(subject_ids), len(times), len(y), X.shape[0]}) != 1:
        raise ValueError("flat arrays have mismatched shapes")
    if covariate_names is None:
        covariate_names = tuple(f"x{j + 1}" for j in range(X.shape[1]))

    order, seen = [], {}
    for sid in subject_ids:
        if sid not in seen:
            seen[sid] = True
            order.append(sid)

    blocks_t, blocks_y, blocks_X = [], [], []
    for sid in order:
        mask = subject_ids == sid
        t = times[mask]
        srt = np.argsort(t, kind="stable")
        t = t[srt]
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError(f"duplicate observation: subject {sid!r} has repeated times")
        blocks_t.append(np.array(t))
        blocks_y.append(np.array(y[mask][srt]))
        blocks_X.append(np.array(X[mask][srt]))

    return LongitudinalDataset(
        subjects=tuple(order),
        times=tuple(blocks_t),
        y=tuple(blocks_y),
        X=tuple(blocks_X),
        covariate_names=tuple(covariate_names),
    )


def load_dataset(path, schema: ColumnSchema = ColumnSchema()) -> LongitudinalDataset:
    """Load a long-format CSV (``subject,time,y,x1,...,xp``).

    Rows are grouped by subject (first-appearance order) and sorted by time
    within subject. Missing or non-numeric cells and duplicated
    (subject, time) pairs are rejected.
    """
    df = pd.read_csv(path)
    for col in (schema.subject, schema.time, schema.response):
        if col not in df.columns:
            raise ValueError(f"missing required column {col!r}")
    if schema.covariates is None:
        covs = [c for c in df.columns
                if c not in (schema.subject, schema.time, schema.response)]
    else:
        covs = list(schema.covariates)
        for c in covs:
            if c not in df.columns:
                raise ValueError(f"missing covariate column {c!r}")
    if not covs:
        raise ValueError("no covariate columns found")

    numeric = df[[schema.time, schema.response] + covs].apply(
        pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        bad = numeric.columns[numeric.isna().any()].tolist()
        raise ValueError(f"missing or non-numeric values in columns {bad}")

    return from_arrays(
        subject_ids=df[schema.subject].astype(str).to_numpy(),
        times=numeric[schema.time].to_numpy(),
        y=numeric[schema.response].to_numpy(),
        X=numeric[covs].to_numpy(),
        covariate_names=tuple(covs),
    )


def standardize(d: LongitudinalDataset, scale_response: bool = True):
    """Standardize covariates (and optionally the response) pooled over all N.

    Every covariate column of the result has pooled mean 0 and pooled
    variance 1 (divisor N). Returns (standardized dataset, ScalingInfo).
    """
    Xall = d.stacked_X
    x_center = Xall.mean(axis=0)
    x_scale = Xall.std(axis=0)  # ddof=0: population convention
    if np.any(x_scale <= 0):
        j = int(np.argmin(x_scale))
        raise ValueError(f"constant covariate column {d.covariate_names[j]!r}")
    if scale_response:
        yall = d.stacked_y
        y_center = float(yall.mean())
        y_scale = float(yall.std())
        if y_scale <= 0:
            raise ValueError("constant response")
    else:
        y_center, y_scale = 0.0, 1.0

    info = ScalingInfo(x_center=x_center, x_scale=x_scale,
                       y_center=y_center, y_scale=y_scale)
    out = LongitudinalDataset(
        subjects=d.subjects,
        times=d.times,
        y=tuple((yi - y_center) / y_scale for yi in d.y),
        X=tuple((Xi - x_center) / x_scale for Xi in d.X),
        covariate_names=d.covariate_names,
    )
    return out, info


def destandardize(d: LongitudinalDataset, info: ScalingInfo) -> LongitudinalDataset:
    """Invert :func:`standardize`."""
    return LongitudinalDataset(
        subjects=d.subjects,
        times=d.times,
        y=tuple(yi * info.y_scale + info.y_center for yi in d.y),
        X=tuple(Xi * info.x_scale + info.x_center for Xi in d.X),
        covariate_names=d.covariate_names,
    )


def to_frame(d: LongitudinalDataset, schema: ColumnSchema = ColumnSchema()) -> pd.DataFrame:
    """Flatten back to a long-format frame (inverse of load)."""
    rows = {
        schema.subject: np.concatenate(
            [[sid] * len(yi) for sid, yi in zip(d.subjects, d.y)]),
        schema.time: np.concatenate(d.times),
        schema.response: d.stacked_y,
    }
    frame = pd.DataFrame(rows)
    Xall = d.stacked_X
    for j, name in enumerate(d.covariate_names):
        frame[name] = Xall[:, j]
    return frame
