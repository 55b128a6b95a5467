"""Randomized-experiment data: samples, datasets, CSV ingestion and honest splits.

A :class:`Dataset` is stored column-wise. Treatment values live in ``z`` as
float codes (the value itself for continuous/ordinal treatments, the index
into ``treatment_labels`` for categorical ones); control rows carry ``NaN``
until they are augmented, and ``w`` is the treated-arm indicator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

TREATMENT_KINDS = ("continuous", "ordinal", "categorical")
FEATURE_KINDS = ("real", "categorical")


class DataError(ValueError):
    """Base class for invalid experiment data."""

    code = "data"


class SchemaError(DataError):
    code = "schema"


class DegenerateArmError(DataError):
    code = "degenerate-arm"


class KindError(DataError):
    code = "kind"


class ParseError(DataError):
    code = "parse"

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class _Control:
    """The distinguished treatment value T = 0."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "CONTROL"

    def __reduce__(self):
        return (_Control, ())


CONTROL = _Control()


def is_control(value) -> bool:
    return value is CONTROL


def treatment_variant(value) -> str:
    """Return 'control', 'continuous', 'ordinal' or 'categorical' for one value."""
    if value is CONTROL:
        return "control"
    if isinstance(value, str):
        return "categorical"
    if isinstance(value, (bool, np.bool_)):
        raise KindError(f"boolean treatment value {value!r} is ambiguous")
    if isinstance(value, (int, np.integer)):
        return "ordinal"
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise KindError(f"non-finite treatment value {value!r}")
        return "continuous"
    raise KindError(f"unsupported treatment value {value!r}")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = "real"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise SchemaError(f"categorical feature {self.name!r} needs a label alphabet")


@dataclass(frozen=True)
class Sample:
    covariates: tuple
    treatment: object
    response: float

    @property
    def arm_indicator(self) -> int:
        return 0 if self.treatment is CONTROL else 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar collection of experiment units.

    Attributes:
        X: (n, p) covariates; categorical features hold integer label codes.
        w: (n,) boolean treated-arm indicator.
        z: (n,) treatment codes, NaN on control rows that were not augmented.
        y: (n,) responses.
        features: per-column :class:`FeatureSpec`.
        treatment_kind: one of ``TREATMENT_KINDS``.
        treatment_labels: label alphabet when the treatment is categorical.
        role: ``"training"`` or ``"estimation"`` (informational).
    """

    X: np.ndarray
    w: np.ndarray
    z: np.ndarray
    y: np.ndarray
    features: tuple[FeatureSpec, ...]
    treatment_kind: str
    treatment_labels: tuple[str, ...] = ()
    role: str = "training"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        w = np.asarray(self.w, dtype=bool).reshape(-1)
        z = np.asarray(self.z, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (len(w) == len(z) == len(y) == n):
            raise SchemaError("X, w, z and y must have the same number of rows")
        features = tuple(self.features)
        if len(features) != X.shape[1]:
            raise SchemaError(
                f"feature schema has {len(features)} entries but X has {X.shape[1]} columns"
            )
        if self.treatment_kind not in TREATMENT_KINDS:
            raise KindError(f"unknown treatment kind {self.treatment_kind!r}")
        if self.treatment_kind == "categorical" and not self.treatment_labels:
            raise KindError("categorical treatment needs treatment_labels")
        for j, spec in enumerate(features):
            if spec.kind == "categorical":
                col = X[:, j]
                ok = (col == np.round(col)) & (col >= 0) & (col < len(spec.categories))
                if not ok.all():
                    raise SchemaError(f"feature {spec.name!r}: label codes out of range")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise DataError("covariates and responses must be finite")
        zt = z[w]
        if np.isnan(zt).any():
            raise KindError("treated rows need a treatment value")
        if self.treatment_kind == "ordinal" and (zt != np.round(zt)).any():
            raise KindError("ordinal treatment values must be integers")
        if self.treatment_kind == "categorical":
            if ((zt != np.round(zt)) | (zt < 0) | (zt >= len(self.treatment_labels))).any():
                raise KindError("categorical treatment codes out of range")
        if w.all() or not w.any():
            raise DegenerateArmError(
                f"need at least one control and one treated row "
                f"(treated={int(w.sum())}, control={int((~w).sum())})"
            )
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "treatment_labels", tuple(self.treatment_labels))

    # -- basic shape -----------------------------------------------------
    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return int((~self.w).sum())

    @property
    def is_augmented(self) -> bool:
        return not np.isnan(self.z).any()

    # -- derived datasets --------------------------------------------------
    def subset(self, idx, role: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx], self.w[idx], self.z[idx], self.y[idx], self.features,
            self.treatment_kind, self.treatment_labels, role or self.role,
        )

    def with_z(self, z: np.ndarray) -> "Dataset":
        return Dataset(
            self.X, self.w, z, self.y, self.features,
            self.treatment_kind, self.treatment_labels, self.role,
        )

    def with_role(self, role: str) -> "Dataset":
        return Dataset(
            self.X, self.w, self.z, self.y, self.features,
            self.treatment_kind, self.treatment_labels, role,
        )

    def treatment_distribution(self) -> "TreatmentDistribution":
        return TreatmentDistribution(self.z[self.w], self.treatment_kind, self.treatment_labels)

    # -- value-level access ------------------------------------------------
    def decode_treatment(self, code: float):
        """Map a stored code back to a treatment value (CONTROL for NaN)."""
        return decode_treatment(code, self.treatment_kind, self.treatment_labels)

    def encode_treatment(self, value) -> float:
        return encode_treatment(value, self.treatment_kind, self.treatment_labels)

    def sample(self, i: int) -> Sample:
        cov = []
        for j, spec in enumerate(self.features):
            v = self.X[i, j]
            cov.append(spec.categories[int(v)] if spec.kind == "categorical" else float(v))
        t = self.decode_treatment(self.z[i]) if self.w[i] else CONTROL
        return Sample(tuple(cov), t, float(self.y[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self.sample(i)

    @classmethod
    def from_samples(
        cls,
        samples: Iterable[Sample],
        features: Sequence[FeatureSpec] | None = None,
        role: str = "training",
    ) -> "Dataset":
        """Build a dataset from row objects, inferring the treatment kind.

        Raises:
            KindError: if treated rows mix continuous, ordinal and categorical values.
        """
        samples = list(samples)
        if not samples:
            raise DegenerateArmError("no samples")
        p = len(samples[0].covariates)
        if features is None:
            features = _infer_features([s.covariates for s in samples])
        if len(features) != p:
            raise SchemaError("feature schema length does not match covariates")
        variants = {treatment_variant(s.treatment) for s in samples} - {"control"}
        if len(variants) > 1:
            raise KindError(f"mixed treatment kinds: {sorted(variants)}")
        kind = variants.pop() if variants else "continuous"
        labels: tuple[str, ...] = ()
        if kind == "categorical":
            labels = tuple(sorted({s.treatment for s in samples if s.treatment is not CONTROL}))
        X = np.empty((len(samples), p))
        for i, s in enumerate(samples):
            if len(s.covariates) != p:
                raise SchemaError(f"sample {i}: covariate length {len(s.covariates)} != {p}")
            for j, (v, spec) in enumerate(zip(s.covariates, features)):
                X[i, j] = _encode_feature(v, spec, i)
        w = np.array([s.treatment is not CONTROL for s in samples])
        z = np.array([encode_treatment(s.treatment, kind, labels) for s in samples])
        y = np.array([float(s.response) for s in samples])
        return cls(X, w, z, y, tuple(features), kind, labels, role)

    def equals(self, other: "Dataset") -> bool:
        """Field-wise equality (NaN-aware on z)."""
        return (
            self.features == other.features
            and self.treatment_kind == other.treatment_kind
            and self.treatment_labels == other.treatment_labels
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.z, other.z, equal_nan=True)
            and np.array_equal(self.y, other.y)
        )


def _infer_features(rows: list[tuple]) -> tuple[FeatureSpec, ...]:
    specs = []
    for j in range(len(rows[0])):
        col = [r[j] for r in rows]
        if any(isinstance(v, str) for v in col):
            specs.append(FeatureSpec(f"x{j + 1}", "categorical", tuple(sorted(set(map(str, col))))))
        else:
            specs.append(FeatureSpec(f"x{j + 1}"))
    return tuple(specs)


def _encode_feature(value, spec: FeatureSpec, row: int) -> float:
    if spec.kind == "categorical":
        try:
            return float(spec.categories.index(str(value)))
        except ValueError:
            raise ParseError(f"label {value!r} not in {spec.name!r} alphabet", row) from None
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse {value!r} as a number for {spec.name!r}", row) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value for {spec.name!r}", row)
    return v


def encode_treatment(value, kind: str, labels: Sequence[str] = ()) -> float:
    if value is CONTROL:
        return math.nan
    if kind == "categorical":
        if not isinstance(value, str):
            raise KindError(f"expected a categorical label, got {value!r}")
        try:
            return float(list(labels).index(value))
        except ValueError:
            raise KindError(f"unknown treatment label {value!r}") from None
    if isinstance(value, str):
        raise KindError(f"expected a numeric treatment, got {value!r}")
    v = float(value)
    if v == 0:
        raise KindError("0 is reserved for control")
    return v


def decode_treatment(code: float, kind: str, labels: Sequence[str] = ()):
    if code is None or (isinstance(code, float) and math.isnan(code)):
        return CONTROL
    if kind == "categorical":
        return labels[int(code)]
    if kind == "ordinal":
        return int(code)
    return float(code)


# ---------------------------------------------------------------------------
# Treatment distribution


class TreatmentDistribution:
    """Empirical distribution of observed (non-control) treatment codes."""

    def __init__(self, values, kind: str, labels: Sequence[str] = ()):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            raise DegenerateArmError("treatment distribution needs at least one value")
        if np.isnan(values).any():
            raise KindError("treatment distribution cannot contain control values")
        if kind not in TREATMENT_KINDS:
            raise KindError(f"unknown treatment kind {kind!r}")
        self.values = _readonly(values)
        self.kind = kind
        self.labels = tuple(labels)

    def __len__(self) -> int:
        return self.values.size

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` codes i.i.d. with replacement."""
        return self.values[rng.integers(0, self.values.size, size=size)]

    def restrict(self, constraint) -> "TreatmentDistribution":
        """Restrict to values inside a cohort constraint (anything with ``contains``)."""
        return TreatmentDistribution(
            self.values[constraint.contains(self.values)], self.kind, self.labels
        )

    def support(self) -> np.ndarray:
        return np.unique(self.values)

    def shares(self) -> dict[float, float]:
        vals, counts = np.unique(self.values, return_counts=True)
        return {float(v): c / self.values.size for v, c in zip(vals, counts)}


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_dataset`.

    ``feature_cols=None`` takes every column other than the treatment and
    response columns, in file order. Features listed in
    ``categorical_features`` keep their labels; all others must parse as reals.
    """

    treatment_col: str = "t"
    response_col: str = "y"
    control_value: str = "0"
    feature_cols: tuple[str, ...] | None = None
    categorical_features: tuple[str, ...] = ()
    treatment_kind: str | None = None
    extra: dict = field(default_factory=dict, compare=False)


def _classify_treatment_column(cells: list[str]) -> str:
    numeric, textual = [], []
    for c in cells:
        try:
            v = float(c)
        except ValueError:
            textual.append(c)
            continue
        numeric.append(v)
    if numeric and textual:
        raise KindError(
            f"treatment column mixes numeric and label values (e.g. {textual[0]!r})"
        )
    if textual:
        return "categorical"
    if all(v == round(v) for v in numeric):
        return "ordinal"
    return "continuous"


def load_dataset(path, schema: CsvSchema = CsvSchema(), role: str = "training") -> Dataset:
    """Read a UTF-8 comma-separated file with a header row into a Dataset."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    for col in (schema.treatment_col, schema.response_col):
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    if schema.feature_cols is None:
        feature_cols = [c for c in header if c not in (schema.treatment_col, schema.response_col)]
    else:
        feature_cols = list(schema.feature_cols)
        missing = [c for c in feature_cols if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing}")
    if not feature_cols:
        raise SchemaError("at least one feature column is required")
    pos = {c: header.index(c) for c in header}
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(r)}", i)

    t_cells = [r[pos[schema.treatment_col]].strip() for r in rows]
    treated_cells = [c for c in t_cells if c != schema.control_value]
    kind = schema.treatment_kind or _classify_treatment_column(treated_cells)
    if kind not in TREATMENT_KINDS:
        raise KindError(f"unknown treatment kind {kind!r}")
    labels: tuple[str, ...] = ()
    if kind == "categorical":
        labels = tuple(sorted(set(treated_cells)))

    features = []
    for c in feature_cols:
        if c in schema.categorical_features:
            cats = tuple(sorted({r[pos[c]] for r in rows}))
            features.append(FeatureSpec(c, "categorical", cats))
        else:
            features.append(FeatureSpec(c))

    n = len(rows)
    X = np.empty((n, len(features)))
    w = np.zeros(n, dtype=bool)
    z = np.full(n, np.nan)
    y = np.empty(n)
    for i, r in enumerate(rows):
        for j, spec in enumerate(features):
            X[i, j] = _encode_feature(r[pos[spec.name]], spec, i)
        try:
            y[i] = float(r[pos[schema.response_col]])
        except ValueError:
            raise ParseError(f"cannot parse response {r[pos[schema.response_col]]!r}", i) from None
        if not math.isfinite(y[i]):
            raise ParseError("non-finite response", i)
        cell = t_cells[i]
        if cell == schema.control_value:
            continue
        w[i] = True
        if kind == "categorical":
            z[i] = labels.index(cell)
        else:
            try:
                z[i] = float(cell)
            except ValueError:
                raise ParseError(f"cannot parse treatment {cell!r}", i) from None
            if kind == "ordinal" and z[i] != round(z[i]):
                raise ParseError(f"ordinal treatment {cell!r} is not an integer", i)
    return Dataset(X, w, z, y, tuple(features), kind, labels, role)


def _format_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_dataset(d: Dataset, path, schema: CsvSchema = CsvSchema()) -> None:
    """Write the canonical CSV dialect read by :func:`load_dataset`.

    Numbers use the shortest round-tripping representation, integral values
    are written without a decimal point, and control rows use the schema's
    control sentinel. Augmented Z values of control rows are not written.
    """
    header = [f.name for f in d.features] + [schema.treatment_col, schema.response_col]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for i in range(len(d)):
            row = []
            for j, spec in enumerate(d.features):
                v = d.X[i, j]
                row.append(spec.categories[int(v)] if spec.kind == "categorical" else _format_number(v))
            if not d.w[i]:
                row.append(schema.control_value)
            elif d.treatment_kind == "categorical":
                row.append(d.treatment_labels[int(d.z[i])])
            else:
                row.append(_format_number(d.z[i]))
            row.append(_format_number(d.y[i]))
            out.writerow(row)


# ---------------------------------------------------------------------------
# Honest split


def honest_split_indices(
    w: np.ndarray, fraction: float = 0.5, seed: int = 0, max_retries: int = 1000
) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the training and estimation halves used by :func:`split_honest`."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    w = np.asarray(w, dtype=bool)
    if w.sum() < 2 or (~w).sum() < 2:
        raise DegenerateArmError("honest split needs at least two rows per arm")
    n = len(w)
    n_train = min(max(int(round(fraction * n)), 2), n - 2)
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        perm = rng.permutation(n)
        tr, est = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        if 0 < w[tr].sum() < len(tr) and 0 < w[est].sum() < len(est):
            return tr, est
    raise DegenerateArmError("could not find a split with both arms in each half")


def split_honest(
    d: Dataset, fraction: float = 0.5, seed: int = 0, max_retries: int = 1000
) -> tuple[Dataset, Dataset]:
    """Randomly split ``d`` into disjoint training and estimation halves.

    Permutations are redrawn until both halves contain at least one treated
    and one control row. The split is a function of ``seed`` alone.

    Raises:
        DegenerateArmError: if either arm has fewer than two rows or no
            admissible permutation is found within ``max_retries`` draws.
    """
    tr, est = honest_split_indices(d.w, fraction, seed, max_retries)
    return d.subset(tr, "training"), d.subset(est, "estimation")
