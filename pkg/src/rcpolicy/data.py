"""Point-treatment dataset container and CSV round-tripping.

A Dataset holds covariates W, a binary treatment A, an outcome Y bounded
to a known interval, and an optional nonnegative cost per observation.
Outcomes are analyzed internally on the [0, 1] scale; `scale_outcome`
produces the rescaled copy and `unscale` maps estimates back.

CSV text uses shortest exact float representations (round-trip safe at
up to 17 significant digits), so write -> ingest -> write is
byte-identical.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ColumnSchema",
    "Dataset",
    "Observation",
    "ingest_csv",
    "scale_outcome",
    "unscale",
    "write_csv",
]


@dataclass(frozen=True)
class Observation:
    """One row: covariate vector, treatment arm, outcome, optional cost."""

    w: np.ndarray
    a: int
    y: float
    c: float | None = None


@dataclass(frozen=True)
class ColumnSchema:
    """Column mapping for CSV ingestion.

    outcome_kind: "binary", "bounded_real", or None to auto-detect
    (all outcome values in {0, 1} means binary). y_bounds overrides the
    observed range for bounded_real outcomes.
    """

    treatment: str
    outcome: str
    covariates: tuple[str, ...]
    cost: str | None = None
    outcome_kind: str | None = None
    y_bounds: tuple[float, float] | None = None


@dataclass(frozen=True)
class Dataset:
    """Columnar point-treatment data.

    y_bounds always brackets y. y_scale, when set, holds the original
    outcome bounds that y was affinely mapped from (lo, hi); None means
    y is on its native scale.
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    covariate_names: tuple[str, ...]
    outcome_kind: str = "binary"
    y_bounds: tuple[float, float] = (0.0, 1.0)
    c: np.ndarray | None = None
    y_scale: tuple[float, float] | None = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        a = np.asarray(self.a, dtype=int)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        if self.c is not None:
            object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        n = len(y)
        if n < 1:
            raise ValueError("dataset must contain at least one observation")
        if w.shape[0] != n or len(a) != n or (self.c is not None and len(self.c) != n):
            raise ValueError("column lengths disagree")
        if w.shape[1] != len(self.covariate_names):
            raise ValueError("covariate_names does not match covariate count")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(y)):
            raise ValueError("non-finite values in covariates or outcome")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("treatment must be coded 0/1")
        if self.outcome_kind not in ("binary", "bounded_real"):
            raise ValueError(f"unknown outcome_kind {self.outcome_kind!r}")
        lo, hi = self.y_bounds
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("y_bounds must be finite with min < max")
        if np.any(y < lo) or np.any(y > hi):
            raise ValueError("outcome values outside y_bounds")
        if self.outcome_kind == "binary" and not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("binary outcome_kind requires y in {0, 1}")
        if self.c is not None:
            if not np.all(np.isfinite(self.c)) or np.any(self.c < 0):
                raise ValueError("costs must be finite and nonnegative")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.a))

    @property
    def has_both_arms(self) -> bool:
        return 0 < self.n_treated < self.n

    def observation(self, i: int) -> Observation:
        ci = None if self.c is None else float(self.c[i])
        return Observation(w=self.w[i].copy(), a=int(self.a[i]), y=float(self.y[i]), c=ci)

    def observations(self) -> list[Observation]:
        return [self.observation(i) for i in range(self.n)]

    def subset(self, idx: np.ndarray) -> "Dataset":
        c = None if self.c is None else self.c[idx]
        return replace(self, w=self.w[idx], a=self.a[idx], y=self.y[idx], c=c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_c = (self.c is None and other.c is None) or (
            self.c is not None and other.c is not None and np.array_equal(self.c, other.c)
        )
        return (
            np.array_equal(self.w, other.w)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
            and same_c
            and self.covariate_names == other.covariate_names
            and self.outcome_kind == other.outcome_kind
            and self.y_bounds == other.y_bounds
            and self.y_scale == other.y_scale
        )

    __hash__ = None


def ingest_csv(path, schema: ColumnSchema) -> Dataset:
    """Read and validate a CSV into a Dataset.

    Rejects missing or non-numeric cells (naming the column), non-binary
    treatment codes, single-arm data, and out-of-bounds outcomes.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    col_idx = {name: j for j, name in enumerate(header)}
    needed = [schema.treatment, schema.outcome, *schema.covariates]
    if schema.cost is not None:
        needed.append(schema.cost)
    for name in needed:
        if name not in col_idx:
            raise ValueError(f"{path}: missing column {name!r}")

    def column(name: str) -> np.ndarray:
        j = col_idx[name]
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            cell = row[j].strip() if j < len(row) else ""
            if cell == "":
                raise ValueError(f"{path}: missing value in column {name!r} (row {i + 2})")
            try:
                out[i] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} in column {name!r} (row {i + 2})"
                ) from None
        return out

    a_raw = column(schema.treatment)
    if not np.all(np.isin(a_raw, (0.0, 1.0))):
        bad = sorted(set(a_raw[~np.isin(a_raw, (0.0, 1.0))]))
        raise ValueError(
            f"{path}: treatment column {schema.treatment!r} must be coded 0/1, saw {bad[:5]}"
        )
    a = a_raw.astype(int)
    if a.sum() == 0 or a.sum() == len(a):
        raise ValueError(f"{path}: single-arm dataset (treatment column {schema.treatment!r})")

    y = column(schema.outcome)
    w = np.column_stack([column(name) for name in schema.covariates])
    c = column(schema.cost) if schema.cost is not None else None

    kind = schema.outcome_kind
    if kind is None:
        kind = "binary" if np.all((y == 0.0) | (y == 1.0)) else "bounded_real"
    if kind == "binary":
        bounds = (0.0, 1.0)
    elif schema.y_bounds is not None:
        bounds = schema.y_bounds
    else:
        lo, hi = float(np.min(y)), float(np.max(y))
        if lo == hi:
            raise ValueError(
                f"{path}: outcome column {schema.outcome!r} is constant; "
                "bounded_real outcomes need a non-degenerate range"
            )
        bounds = (lo, hi)

    return Dataset(
        w=w,
        a=a,
        y=y,
        covariate_names=tuple(schema.covariates),
        outcome_kind=kind,
        y_bounds=bounds,
        c=c,
    )


def _fmt(x: float) -> str:
    # shortest representation that round-trips the exact float value
    return repr(float(x))


def write_csv(ds: Dataset, path) -> None:
    """Write a Dataset with exact-round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(ds.covariate_names) + ["a", "y"] + (["c"] if ds.c is not None else [])
        writer.writerow(header)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.w[i]]
            row.append(str(int(ds.a[i])))
            row.append(_fmt(ds.y[i]))
            if ds.c is not None:
                row.append(_fmt(ds.c[i]))
            writer.writerow(row)


def default_schema(ds: Dataset) -> ColumnSchema:
    """Schema matching write_csv's column layout."""
    return ColumnSchema(
        treatment="a",
        outcome="y",
        covariates=ds.covariate_names,
        cost="c" if ds.c is not None else None,
        outcome_kind=ds.outcome_kind,
        y_bounds=None if ds.outcome_kind == "binary" else ds.y_bounds,
    )


def scale_outcome(ds: Dataset) -> Dataset:
    """Affinely map the outcome onto [0, 1], recording the original bounds.

    Binary outcomes map through the identity (bounds (0, 1)). Applying the
    transform twice is a no-op. The original bounds land in y_scale so value
    estimates can be mapped back with `unscale`.
    """
    if ds.y_scale is not None:
        return ds
    lo, hi = ds.y_bounds
    if hi <= lo:
        raise ValueError("degenerate outcome bounds")
    y = (ds.y - lo) / (hi - lo)
    # guard against float dust outside [0, 1]
    y = np.clip(y, 0.0, 1.0)
    return replace(ds, y=y, y_bounds=(0.0, 1.0), y_scale=(lo, hi))


def unscale(value: float, scale: tuple[float, float] | None) -> float:
    """Map a [0, 1]-scale outcome quantity back to original units."""
    if scale is None:
        return value
    lo, hi = scale
    return value * (hi - lo) + lo
