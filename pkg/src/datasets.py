"""
Data Pipeline

CSV ingestion and preprocessing for binary classification, plus seeded
synthetic data:

1. load_schema / load_csv - read a schema JSON and a CSV into a RawTable
2. preprocess            - drop missing rows, one-hot categoricals, scale
                           numerics, cap row norms at 1, map labels to +/-1
3. split_and_partition   - seeded test split, then round-robin over nodes
4. synthetic_classification - two Gaussian clusters, rows capped at norm 1
"""
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptyAfterFiltering,
    ParseError,
    SchemaMismatch,
    TooFewSamples,
    UnmappableLabel,
)
from .models import Dataset

logger = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "label")


@dataclass(frozen=True)
class Schema:
    """
    Column kinds and label mapping.

    Attributes:
        columns: Ordered mapping column -> "numeric" | "categorical" | "label"
        label_mapping: Raw label value -> +1 / -1
        missing_values: Tokens treated as missing
    """
    columns: dict
    label_mapping: dict
    missing_values: tuple = ("?", "")

    @property
    def label_column(self):
        return next(name for name, kind in self.columns.items() if kind == "label")


@dataclass
class RawTable:
    """String-valued table, missing markers preserved"""
    columns: list
    kinds: dict
    rows: pd.DataFrame = field(repr=False)
    label_column: str
    schema: Schema = field(repr=False)

    def __len__(self):
        return len(self.rows)


@dataclass
class PartitionedData:
    """Per-node training sets plus a shared test set"""
    train: list
    test: Dataset
    dimension: int

    @property
    def batch_sizes(self):
        return [ds.size for ds in self.train]


def load_schema(path):
    """
    Read a schema file:

        {"columns": {"age": "numeric", "workclass": "categorical", "income": "label"},
         "label_mapping": {">50K": 1, "<=50K": -1},
         "missing_values": ["?"]}
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: invalid JSON ({exc})") from exc
    return schema_from_dict(raw)


def schema_from_dict(raw):
    columns = raw.get("columns")
    if not isinstance(columns, dict) or not columns:
        raise SchemaMismatch("schema needs a non-empty 'columns' mapping")
    bad = {name: kind for name, kind in columns.items() if kind not in KINDS}
    if bad:
        raise SchemaMismatch(f"unknown column kinds {bad}; expected {KINDS}")
    labels = [name for name, kind in columns.items() if kind == "label"]
    if len(labels) != 1:
        raise SchemaMismatch(f"schema needs exactly one label column, found {labels}")

    mapping = {str(k): int(v) for k, v in raw.get("label_mapping", {}).items()}
    if not mapping:
        raise SchemaMismatch("schema needs a 'label_mapping'")
    if set(mapping.values()) - {-1, 1}:
        raise SchemaMismatch(f"label_mapping values must be +1 or -1, got {sorted(set(mapping.values()))}")
    missing = tuple(str(v) for v in raw.get("missing_values", ["?"]))
    if "" not in missing:
        missing = missing + ("",)
    return Schema(columns=dict(columns), label_mapping=mapping, missing_values=missing)


def load_csv(path, schema):
    """
    Read a comma-separated, headered, UTF-8 file as strings.

    Raises:
        ParseError: ragged rows (with the 1-based file line as `row`)
        SchemaMismatch: header disagrees with the schema
    """
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        row = int(match.group(1)) if match else None
        raise ParseError(f"{path}: {exc}", row=row) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path}: file is empty") from exc

    frame.columns = [str(c).strip() for c in frame.columns]
    expected = list(schema.columns)
    if set(frame.columns) != set(expected) or len(frame.columns) != len(expected):
        missing = sorted(set(expected) - set(frame.columns))
        extra = sorted(set(frame.columns) - set(expected))
        raise SchemaMismatch(f"{path}: header mismatch (missing {missing}, unexpected {extra})")

    # short rows are padded with NaN by pandas
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        index = int(np.flatnonzero(short)[0])
        column = frame.columns[int(np.flatnonzero(frame.iloc[index].isna().to_numpy())[0])]
        raise ParseError(f"{path}: line {index + 2} has too few fields", row=index + 2, column=column)

    frame = frame.apply(lambda col: col.str.strip())
    logger.debug("loaded %d rows from %s", len(frame), path)
    return RawTable(
        columns=expected,
        kinds=dict(schema.columns),
        rows=frame[expected],
        label_column=schema.label_column,
        schema=schema,
    )


def preprocess(raw, drop_missing=True):
    """
    Turn a RawTable into (features, labels).

    Steps: drop rows with missing values; one-hot each categorical column
    (levels in lexicographic order); scale numeric columns to max |value| 1;
    divide each row by max(1, ||row||); map labels to +/-1.

    With drop_missing=False missing categoricals become their own level and
    missing numerics become 0.

    Returns:
        tuple: (features B x d, labels length B)
    """
    frame = raw.rows
    markers = set(raw.schema.missing_values)
    missing = frame.isin(markers)
    if drop_missing:
        frame = frame.loc[~missing.any(axis=1)]
    if len(frame) == 0:
        raise EmptyAfterFiltering("no rows left after removing missing values")

    label_values = frame[raw.label_column]
    unknown = sorted(set(label_values) - set(raw.schema.label_mapping))
    if unknown:
        raise UnmappableLabel(f"label values {unknown} are not in the label mapping")
    labels = label_values.map(raw.schema.label_mapping).to_numpy(dtype=float)

    blocks = []
    for name in raw.columns:
        kind = raw.kinds[name]
        if kind == "label":
            continue
        column = frame[name]
        if kind == "categorical":
            levels = sorted(column.unique())
            encoded = pd.get_dummies(pd.Categorical(column, categories=levels), dtype=float)
            blocks.append(encoded.to_numpy())
        else:
            column = column.where(~column.isin(markers), "0")
            try:
                values = pd.to_numeric(column, errors="raise").to_numpy(dtype=float)
            except (ValueError, TypeError) as exc:
                raise ParseError(f"column {name!r} is not numeric: {exc}", column=name) from exc
            scale = np.abs(values).max()
            if scale > 0:
                values = values / scale
            blocks.append(values[:, None])

    if not blocks:
        raise SchemaMismatch("schema has no feature columns")
    features = np.hstack(blocks)
    features = features / np.maximum(1.0, np.linalg.norm(features, axis=1))[:, None]
    logger.info("preprocessed %d rows into %d features", features.shape[0], features.shape[1])
    return features, labels


def split_and_partition(features, labels, n_nodes, test_fraction, seed):
    """
    Shuffle with `seed`, take floor(test_fraction * total) rows as the test
    set, then deal the rest round-robin over the nodes.

    Raises:
        TooFewSamples: fewer training rows than nodes
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    total = features.shape[0]
    n_test = int(np.floor(test_fraction * total + 1e-9))
    if total - n_test < n_nodes:
        raise TooFewSamples(f"{total - n_test} training rows cannot cover {n_nodes} nodes")

    order = np.random.default_rng(seed).permutation(total)
    test_idx, train_idx = order[:n_test], order[n_test:]
    train = [Dataset(features[train_idx[i::n_nodes]], labels[train_idx[i::n_nodes]]) for i in range(n_nodes)]
    test = Dataset(features[test_idx].reshape(n_test, features.shape[1]), labels[test_idx])
    return PartitionedData(train=train, test=test, dimension=features.shape[1])


def synthetic_classification(n_samples, d, separation, seed):
    """
    Two Gaussian clusters at +/- separation * u (u a random unit vector),
    identity covariance, labels by cluster, rows divided by max(1, ||row||).
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    labels = rng.choice(np.array([-1.0, 1.0]), size=n_samples)
    features = labels[:, None] * separation * direction + rng.standard_normal((n_samples, d))
    features = features / np.maximum(1.0, np.linalg.norm(features, axis=1))[:, None]
    return features, labels
