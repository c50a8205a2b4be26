"""Synthetic data generation and CSV ingestion.

Dataset CSV format: header x1..xd,y with y in {-1,+1}.  Floats are
written in shortest round-trip form so emit/ingest is lossless.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .kernels import build_kernel, sample_gp_prior

FORMAT_VERSION = 1

BALANCE_ATTEMPTS = 1000


class GenerationError(Exception):
    """Synthetic generation could not satisfy its constraints."""


class IngestionError(Exception):
    """Malformed input file; message carries the offending location."""


@dataclass(frozen=True)
class Dataset:
    """Covariates with -1/+1 labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one column")
        if y.shape[0] != X.shape[0]:
            raise ValueError("label count does not match row count")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be -1 or +1")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def draw_labels(f, rng):
    """Labels from the probit model: +1 with probability Phi(f_i)."""
    return np.where(rng.uniform(size=np.shape(f)[0]) < ndtr(f), 1.0, -1.0)


def generate_synthetic(n, d, hyper, kind="isotropic", seed=0):
    """Draw a balanced dataset from the generative model.

    Covariates are uniform on the unit hypercube, latents follow the GP
    prior, labels are +1 with probability Phi(f_i).  Whole label vectors
    are regenerated from fresh latents until the classes balance exactly
    (n/2 each); the retry cap turns pathological imbalance into an error
    rather than a hang.
    """
    if n < 2 or n % 2 != 0:
        raise GenerationError("n must be even to balance the classes")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    km = build_kernel(X, hyper, kind)
    for _ in range(BALANCE_ATTEMPTS):
        f = sample_gp_prior(km, rng)
        y = draw_labels(f, rng)
        if int(np.sum(y > 0)) == n // 2:
            return Dataset(X=X, y=y), f
    raise GenerationError(
        f"could not draw balanced labels in {BALANCE_ATTEMPTS} attempts"
    )


@dataclass
class Standardizer:
    """Per-column affine transform fitted on training data.

    Constant columns get unit scale (mapping them to all zeros) with a
    warning instead of dividing by zero.
    """

    means: np.ndarray = None
    scales: np.ndarray = None
    columns: list = field(default_factory=list)

    def fit(self, X, columns=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.means = X.mean(axis=0)
        sd = X.std(axis=0, ddof=0)
        constant = sd <= 0
        if np.any(constant):
            warnings.warn(
                "constant column(s) %s standardized to all zeros"
                % [i for i in np.nonzero(constant)[0]]
            )
            sd = np.where(constant, 1.0, sd)
        self.scales = sd
        self.columns = list(columns) if columns is not None else []
        return self

    def transform(self, X):
        if self.means is None:
            raise ValueError("standardizer not fitted")
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.means) / self.scales

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "means": [float(v) for v in self.means],
            "scales": [float(v) for v in self.scales],
            "columns": list(self.columns),
        }

    @classmethod
    def from_dict(cls, payload):
        out = cls()
        out.means = np.asarray(payload["means"], dtype=float)
        out.scales = np.asarray(payload["scales"], dtype=float)
        out.columns = list(payload.get("columns", []))
        return out


def _parse_filter(expression):
    """Row filter of the form ``column OP value`` with OP in
    ==, !=, <, <=, >, >=."""
    for op in ("==", "!=", "<=", ">=", "<", ">"):
        if op in expression:
            column, value = expression.split(op, 1)
            return column.strip(), op, value.strip()
    raise IngestionError(f"cannot parse row filter {expression!r}")


def _filter_match(cell, op, value):
    try:
        lhs, rhs = float(cell), float(value)
    except ValueError:
        lhs, rhs = cell, value
        if op not in ("==", "!="):
            raise IngestionError(
                f"ordering filter needs numeric operands, got {cell!r}"
            )
    if op == "==":
        return lhs == rhs
    if op == "!=":
        return lhs != rhs
    if op == "<":
        return lhs < rhs
    if op == "<=":
        return lhs <= rhs
    if op == ">":
        return lhs > rhs
    return lhs >= rhs


def ingest_csv(path, label_column="y", standardize=False, row_filter=None,
               standardizer=None):
    """Read a dataset from CSV.

    Labels are mapped to {-1, +1}: values already in that set (or {0, 1})
    keep their meaning, any other two-valued column is mapped in sorted
    order.  With ``standardize`` the covariates are shifted/scaled by
    training statistics -- freshly fitted, or taken from a provided
    ``standardizer`` (reuse on test data).

    Returns (Dataset, Standardizer-or-None).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise IngestionError(f"{path}: missing label column {label_column!r}")
        label_idx = header.index(label_column)
        feature_idx = [i for i in range(len(header)) if i != label_idx]
        filt = _parse_filter(row_filter) if row_filter else None
        if filt and filt[0] not in header:
            raise IngestionError(f"{path}: filter column {filt[0]!r} not found")
        filt_idx = header.index(filt[0]) if filt else None

        rows, labels_raw = [], []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestionError(f"{path}:{r}: expected {len(header)} cells")
            if filt and not _filter_match(row[filt_idx].strip(), filt[1], filt[2]):
                continue
            values = []
            for i in feature_idx:
                cell = row[i].strip()
                try:
                    values.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}:{r}: non-numeric value {cell!r} in column "
                        f"{header[i]!r}"
                    ) from None
            rows.append(values)
            labels_raw.append(row[label_idx].strip())

    if not rows:
        raise IngestionError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=float)
    y = _map_labels(labels_raw, path)
    fitted = None
    if standardize:
        if standardizer is None:
            fitted = Standardizer().fit(X, columns=[header[i] for i in feature_idx])
        else:
            fitted = standardizer
        X = fitted.transform(X)
    return Dataset(X=X, y=y), fitted


def _map_labels(raw, path):
    values = sorted(set(raw))
    if len(values) != 2:
        raise IngestionError(
            f"{path}: label column must carry exactly two classes, got {values}"
        )
    try:
        numeric = sorted(float(v) for v in values)
        if numeric == [-1.0, 1.0]:
            return np.array([float(v) for v in raw])
        if numeric == [0.0, 1.0]:
            return np.array([1.0 if float(v) == 1.0 else -1.0 for v in raw])
    except ValueError:
        pass
    mapping = {values[0]: -1.0, values[1]: 1.0}
    return np.array([mapping[v] for v in raw])


def emit_csv(dataset, path):
    """Write a dataset as x1..xd,y with shortest round-trip floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(dataset.d)] + ["y"])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.X[i]] + [str(int(dataset.y[i]))]
            )
