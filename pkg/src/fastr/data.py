"""Column-store datasets: CSV ingestion with schema validation, integer
encoding of categorical features, and seeded minibatch iteration.

Categorical levels are assigned codes by first appearance and the level
dictionary is frozen with the fitted model; at prediction time unknown
levels map to the sentinel code -1, which the term evaluations treat as
a zero contribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError

UNSEEN_CODE = -1


@dataclass(frozen=True)
class Schema:
    """Declares how to interpret the columns of a data file."""

    numeric: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    outcome: str | None = None

    def __post_init__(self):
        seen: set[str] = set()
        for name in (*self.numeric, *self.categorical):
            if name in seen:
                raise SchemaError(f"column {name!r} declared twice")
            seen.add(name)
        if self.outcome is not None and self.outcome in self.categorical:
            raise SchemaError("outcome column cannot be categorical")


@dataclass
class Dataset:
    """In-memory column store with integer-encoded categoricals."""

    n_rows: int
    numeric: dict[str, np.ndarray]
    codes: dict[str, np.ndarray]
    levels: dict[str, list[str]]
    outcome_name: str | None = None

    @property
    def outcome(self) -> np.ndarray:
        if self.outcome_name is None:
            raise SchemaError("dataset has no outcome column")
        return self.numeric[self.outcome_name]

    def level_counts(self) -> dict[str, int]:
        return {name: len(lv) for name, lv in self.levels.items()}

    def decode(self, feature: str, code: int) -> str:
        return self.levels[feature][code]


def from_columns(numeric: dict[str, np.ndarray],
                 categorical: dict[str, np.ndarray | list],
                 outcome: str | None = None) -> Dataset:
    """Build a Dataset from in-memory columns; categorical columns may be
    raw label arrays (encoded here, first appearance order) or already
    integer codes paired via ``(codes, levels)`` tuples."""
    lengths = set()
    num = {}
    for name, col in numeric.items():
        arr = np.asarray(col, dtype=np.float64)
        if arr.ndim != 1:
            raise SchemaError(f"numeric column {name!r} must be 1-d")
        if not np.all(np.isfinite(arr)):
            bad = int(np.nonzero(~np.isfinite(arr))[0][0])
            raise DataError(f"non-finite value in column {name!r} at row {bad}")
        num[name] = arr
        lengths.add(arr.size)
    codes: dict[str, np.ndarray] = {}
    levels: dict[str, list[str]] = {}
    for name, col in categorical.items():
        if isinstance(col, tuple):
            c, lv = col
            codes[name] = np.asarray(c, dtype=np.int64)
            levels[name] = list(lv)
        else:
            labels = [str(v) for v in col]
            lv, c = _encode_labels(labels)
            codes[name] = c
            levels[name] = lv
        lengths.add(codes[name].size)
    if len(lengths) > 1:
        raise SchemaError(f"columns have differing lengths: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    if outcome is not None and outcome not in num:
        raise SchemaError(f"outcome column {outcome!r} missing")
    return Dataset(n_rows=n, numeric=num, codes=codes, levels=levels,
                   outcome_name=outcome)


def _encode_labels(labels: list[str]) -> tuple[list[str], np.ndarray]:
    index: dict[str, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        code = index.get(lab)
        if code is None:
            code = len(index)
            index[lab] = code
        out[i] = code
    return list(index), out


def read_csv(path: str, schema: Schema) -> Dataset:
    """Parse a UTF-8 comma-separated file with a header row.

    Every schema column must be present; missing or unparseable values
    raise a DataError naming the offending row and column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        col_idx: dict[str, int] = {}
        for name in (*schema.numeric, *schema.categorical):
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
            col_idx[name] = header.index(name)
        if schema.outcome is not None and schema.outcome not in schema.numeric:
            raise SchemaError(
                f"outcome {schema.outcome!r} must be listed among numeric columns"
            )
        numeric_rows: dict[str, list[float]] = {n: [] for n in schema.numeric}
        label_rows: dict[str, list[str]] = {n: [] for n in schema.categorical}
        for rownum, row in enumerate(reader):
            for name in schema.numeric:
                raw = row[col_idx[name]] if col_idx[name] < len(row) else ""
                if raw == "":
                    raise DataError(f"{path}: missing value at row {rownum}, "
                                    f"column {name!r}")
                try:
                    numeric_rows[name].append(float(raw))
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable numeric {raw!r} at row {rownum}, "
                        f"column {name!r}") from None
            for name in schema.categorical:
                raw = row[col_idx[name]] if col_idx[name] < len(row) else ""
                if raw == "":
                    raise DataError(f"{path}: missing value at row {rownum}, "
                                    f"column {name!r}")
                label_rows[name].append(raw)
    return from_columns({n: np.array(v) for n, v in numeric_rows.items()},
                        label_rows, outcome=schema.outcome)


def write_csv(data: Dataset, path: str, extra: dict[str, np.ndarray] | None = None
              ) -> None:
    """Write the dataset back out; numeric values use shortest round-trip
    formatting so a rewrite parses to an identical Dataset."""
    extra = extra or {}
    names = list(data.numeric) + list(data.codes) + list(extra)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(data.n_rows):
            row = [repr(float(data.numeric[n][i])) for n in data.numeric]
            row += [data.levels[n][data.codes[n][i]] for n in data.codes]
            row += [repr(float(extra[n][i])) for n in extra]
            writer.writerow(row)


def recode(data: Dataset, levels: dict[str, list[str]]) -> tuple[Dataset, int]:
    """Re-encode categorical columns against frozen training dictionaries.

    Unknown labels get the sentinel code -1; the count of such entries
    is returned alongside the recoded dataset.
    """
    unseen = 0
    codes: dict[str, np.ndarray] = {}
    for name, train_levels in levels.items():
        if name not in data.codes:
            raise SchemaError(f"missing categorical feature {name!r}")
        index = {lab: i for i, lab in enumerate(train_levels)}
        own = data.levels[name]
        remap = np.array([index.get(lab, UNSEEN_CODE) for lab in own],
                         dtype=np.int64)
        new_codes = remap[data.codes[name]]
        unseen += int(np.sum(new_codes == UNSEEN_CODE))
        codes[name] = new_codes
    out = Dataset(n_rows=data.n_rows, numeric=data.numeric, codes=codes,
                  levels={n: list(lv) for n, lv in levels.items()},
                  outcome_name=data.outcome_name)
    return out, unseen


@dataclass(frozen=True)
class EncodedBatch:
    """One minibatch: row indices, per-feature integer codes, numeric
    slices, and the outcome slice. No one-hot matrix is ever built."""

    rows: np.ndarray
    codes: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]
    outcome: np.ndarray | None


@dataclass
class BatchPlan:
    """Seeded epoch shuffling over a fixed set of row indices. The
    permutation buffer is allocated once and reshuffled in place so
    iteration allocates only batch-sized arrays."""

    seed: int
    batch_size: int
    rows: np.ndarray
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self._rng = np.random.default_rng(self.seed)
        self.rows = np.array(self.rows, dtype=np.int64)

    @staticmethod
    def for_dataset(data: "Dataset", seed: int, batch_size: int) -> "BatchPlan":
        return BatchPlan(seed=seed, batch_size=batch_size,
                         rows=np.arange(data.n_rows, dtype=np.int64))

    def epoch_order(self) -> np.ndarray:
        self._rng.shuffle(self.rows)
        return self.rows


def take_batch(data: Dataset, rows: np.ndarray, with_outcome: bool = True
               ) -> EncodedBatch:
    numeric = {n: col[rows] for n, col in data.numeric.items()}
    codes = {n: col[rows] for n, col in data.codes.items()}
    outcome = None
    if with_outcome and data.outcome_name is not None:
        outcome = numeric[data.outcome_name]
    return EncodedBatch(rows=rows, codes=codes, numeric=numeric, outcome=outcome)


def batches(data: Dataset, plan: BatchPlan):
    """Yield one epoch of minibatches covering every planned row exactly
    once; the last batch may be short."""
    order = plan.epoch_order()
    m = plan.batch_size
    for start in range(0, order.size, m):
        yield take_batch(data, order[start:start + m])


def sequential_batches(data: Dataset, batch_size: int, rows: np.ndarray | None = None):
    """Fixed-order chunks, used for validation passes and prediction."""
    if rows is None:
        rows = np.arange(data.n_rows, dtype=np.int64)
    for start in range(0, rows.size, batch_size):
        yield take_batch(data, rows[start:start + batch_size])
