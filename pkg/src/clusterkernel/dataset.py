"""Data model for incompletely observed multivariate time series (MTS).

A series is a V x T real matrix together with a binary observation mask of
the same shape; cells with mask 0 are missing and their stored value is never
read. Datasets are loaded from a wide CSV (one row per series/attribute pair,
header ``id,attribute,t1,...,tT``) with an optional ``id,label`` CSV for class
labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

_STD_FLOOR = 1e-6


@dataclass
class MtsRecord:
    """One multivariate time series with its observation mask."""

    values: np.ndarray  # (V, T) float64
    mask: np.ndarray    # (V, T) 0/1
    id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask)
        if self.values.ndim != 2:
            raise DataError(f"series {self.id!r}: values must be 2-d, got shape {self.values.shape}")
        if self.values.shape != self.mask.shape:
            raise DataError(
                f"series {self.id!r}: values shape {self.values.shape} != mask shape {self.mask.shape}")
        if not np.isin(self.mask, (0, 1)).all():
            raise DataError(f"series {self.id!r}: mask entries must be 0 or 1")
        self.mask = self.mask.astype(np.uint8)

    @property
    def n_attributes(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    """Ordered collection of MTS records, optionally with class labels.

    Records may have different lengths right after construction; most
    operations require a common length, which ``resample_length`` enforces.
    """

    records: list = field(default_factory=list)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.records):
                raise DataError(
                    f"{len(self.labels)} labels for {len(self.records)} records")
        if self.records:
            v = self.records[0].n_attributes
            for r in self.records:
                if r.n_attributes != v:
                    raise DataError("all records must share the same number of attributes")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_attributes(self) -> int:
        if not self.records:
            raise DataError("empty dataset has no attribute count")
        return self.records[0].n_attributes

    @property
    def length(self) -> int:
        lengths = {r.length for r in self.records}
        if len(lengths) != 1:
            raise DataError(f"records have differing lengths {sorted(lengths)}; resample first")
        return lengths.pop()

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    def to_arrays(self):
        """Stack into (N, V, T) value and mask arrays. Missing cells are zeroed."""
        t = self.length
        x = np.stack([r.values for r in self.records])
        m = np.stack([r.mask for r in self.records])
        x = np.where(m.astype(bool), x, 0.0)
        assert x.shape[2] == t
        return x, m


@dataclass
class EmpiricalMoments:
    """Observed-cell means per (attribute, time) and pooled per-attribute stds."""

    means: np.ndarray  # (V, T)
    stds: np.ndarray   # (V,), floored at _STD_FLOOR


_MISSING_TOKENS = {"", "nan", "NaN", "NAN"}


def _parse_cell(tok: str, where: str):
    tok = tok.strip()
    if tok in _MISSING_TOKENS:
        return 0.0, 0
    try:
        val = float(tok)
    except ValueError:
        raise DataError(f"non-numeric cell {tok!r} at {where}") from None
    if math.isnan(val):
        return 0.0, 0
    return val, 1


def load_dataset(path, labels_path=None) -> Dataset:
    """Load a dataset from the wide CSV format, plus optional labels CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "attribute":
            raise DataError(f"{path}: header must start with 'id,attribute,t1,...'")
        width = len(header)
        t_len = width - 2

        order: list = []
        per_series: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}:{lineno}: ragged row of length {len(row)}, expected {width}")
            sid, attr = row[0], row[1]
            if sid not in per_series:
                per_series[sid] = {}
                order.append(sid)
            if attr in per_series[sid]:
                raise DataError(f"{path}:{lineno}: duplicate (id, attribute) pair ({sid!r}, {attr!r})")
            vals = np.empty(t_len)
            mask = np.empty(t_len, dtype=np.uint8)
            for j, tok in enumerate(row[2:]):
                vals[j], mask[j] = _parse_cell(tok, f"{path}:{lineno} column t{j + 1}")
            per_series[sid][attr] = (vals, mask)

        if not order:
            raise DataError(f"{path}: no data rows")
        attr_order = list(per_series[order[0]].keys())
        records = []
        for sid in order:
            attrs = per_series[sid]
            if list(attrs.keys()) != attr_order:
                raise DataError(
                    f"{path}: series {sid!r} has attributes {list(attrs)}, expected {attr_order}")
            values = np.stack([attrs[a][0] for a in attr_order])
            mask = np.stack([attrs[a][1] for a in attr_order])
            records.append(MtsRecord(values=values, mask=mask, id=sid))

    labels = None
    if labels_path is not None:
        label_map = _load_label_map(labels_path)
        missing = [sid for sid in order if sid not in label_map]
        if missing:
            raise DataError(f"{labels_path}: no label for series {missing[:5]}")
        extra = sorted(set(label_map) - set(order))
        if extra:
            raise DataError(f"{labels_path}: labels for unknown series {extra[:5]}")
        labels = np.array([label_map[sid] for sid in order], dtype=np.int64)

    return Dataset(records=records, labels=labels)


def _load_label_map(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
            raise DataError(f"{path}: labels header must be 'id,label'")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 'id,label' row")
            sid, lab = row[0], row[1].strip()
            if sid in out:
                raise DataError(f"{path}:{lineno}: duplicate label for {sid!r}")
            try:
                out[sid] = int(lab)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label {lab!r}") from None
    return out


def save_dataset(d: Dataset, path, labels_path=None) -> None:
    """Write the wide CSV (missing cells empty); optionally the labels CSV."""
    t = d.length
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "attribute"] + [f"t{j + 1}" for j in range(t)])
        for rec in d.records:
            for v in range(rec.n_attributes):
                row = [rec.id, f"a{v + 1}"]
                for j in range(t):
                    row.append(repr(float(rec.values[v, j])) if rec.mask[v, j] else "")
                writer.writerow(row)
    if labels_path is not None:
        if d.labels is None:
            raise DataError("dataset has no labels to save")
        with open(labels_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label"])
            for rec, lab in zip(d.records, d.labels):
                writer.writerow([rec.id, int(lab)])


def pooled_moments(d: Dataset):
    """Per-attribute mean and population std over all observed cells pooled
    across series. Raises on attributes with no spread."""
    x, m = d.to_arrays()
    obs = m.astype(bool)
    n_v = d.n_attributes
    mean = np.empty(n_v)
    std = np.empty(n_v)
    for v in range(n_v):
        cells = x[:, v, :][obs[:, v, :]]
        if cells.size < 2:
            raise DataError(f"attribute {v}: fewer than 2 observed values")
        mean[v] = cells.mean()
        std[v] = cells.std()
        if std[v] == 0.0:
            raise DataError(f"attribute {v}: zero observed variance, cannot standardize")
    return mean, std


def apply_standardization(d: Dataset, mean, std) -> Dataset:
    """Shift/scale each attribute by the given pooled moments."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    records = []
    for rec in d.records:
        vals = (rec.values - mean[:, None]) / std[:, None]
        records.append(MtsRecord(values=np.where(rec.mask.astype(bool), vals, 0.0),
                                 mask=rec.mask.copy(), id=rec.id))
    return Dataset(records=records, labels=None if d.labels is None else d.labels.copy())


def standardize(d: Dataset) -> Dataset:
    """Shift/scale each attribute to pooled observed mean 0, population std 1."""
    mean, std = pooled_moments(d)
    return apply_standardization(d, mean, std)


def resample_length(d: Dataset, cap: int = 25) -> Dataset:
    """Window-average every series down to T = ceil(Tmax / ceil(Tmax / cap)).

    Window w of a length-S series covers source indices
    floor((w-1)*S/T) .. floor(w*S/T) (half-open, 0-based); the output cell is
    the mean of the observed cells in the window and is missing only when the
    window holds no observation.
    """
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    t_max = max(r.length for r in d.records)
    t_out = math.ceil(t_max / math.ceil(t_max / cap))
    records = []
    for rec in d.records:
        src = rec.length
        vals = np.zeros((rec.n_attributes, t_out))
        mask = np.zeros((rec.n_attributes, t_out), dtype=np.uint8)
        for w in range(t_out):
            lo = (w * src) // t_out
            hi = ((w + 1) * src) // t_out
            if hi <= lo:
                continue
            seg_m = rec.mask[:, lo:hi].astype(bool)
            cnt = seg_m.sum(axis=1)
            has = cnt > 0
            seg_x = np.where(seg_m, rec.values[:, lo:hi], 0.0)
            vals[has, w] = seg_x.sum(axis=1)[has] / cnt[has]
            mask[has, w] = 1
        records.append(MtsRecord(values=vals, mask=mask, id=rec.id))
    return Dataset(records=records, labels=None if d.labels is None else d.labels.copy())


def empirical_moments(d: Dataset, attrs: Sequence[int], segment) -> EmpiricalMoments:
    """Observed-cell means per (v, t) and pooled per-attribute stds on a restriction.

    ``segment`` is a half-open (start, stop) time range; ``attrs`` indexes
    attributes. Raises if any (v, t) in the restriction has no observation.
    """
    x, m = d.to_arrays()
    start, stop = segment
    attrs = np.asarray(attrs, dtype=np.intp)
    xs = x[:, attrs, start:stop]
    ms = m[:, attrs, start:stop].astype(bool)
    counts = ms.sum(axis=0)
    if (counts == 0).any():
        v_i, t_i = np.argwhere(counts == 0)[0]
        raise DataError(
            f"no observed value at attribute {int(attrs[v_i])}, time {start + int(t_i)} "
            "in the selected restriction")
    means = np.where(ms, xs, 0.0).sum(axis=0) / counts
    stds = np.empty(len(attrs))
    for i in range(len(attrs)):
        cells = xs[:, i, :][ms[:, i, :]]
        stds[i] = cells.std()
    stds = np.maximum(stds, _STD_FLOOR)
    return EmpiricalMoments(means=means, stds=stds)


def inject_missing(d: Dataset, pattern: str, p: float, seed: int) -> Dataset:
    """Remove observed cells following an MCAR, MAR or MNAR mechanism.

    MCAR removes each observed cell independently with probability p. MAR
    removes x_i(t) with probability p when the paired attribute
    j = (i + 1) mod V is observed with value > 0.5. MNAR removes x_i(t) with
    probability p when x_i(t) > 0.5. MAR/MNAR thresholds assume standardized
    data. Already-missing cells stay missing; labels pass through unchanged.
    """
    pattern = pattern.upper()
    if pattern not in ("MCAR", "MAR", "MNAR"):
        raise ConfigError(f"unknown missingness pattern {pattern!r}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"missing probability must be in [0, 1], got {p}")
    if pattern == "MAR" and d.n_attributes == 1:
        raise ConfigError("MAR requires at least 2 attributes (no paired attribute exists)")
    rng = np.random.default_rng(seed)
    records = []
    for rec in d.records:
        obs = rec.mask.astype(bool)
        u = rng.random(rec.mask.shape)
        if pattern == "MCAR":
            eligible = obs
        elif pattern == "MNAR":
            eligible = obs & (rec.values > 0.5)
        else:  # MAR: condition on the paired attribute, read only where observed
            n_v = rec.n_attributes
            paired = np.roll(np.arange(n_v), -1)
            cond = obs[paired] & (np.where(obs[paired], rec.values[paired], 0.0) > 0.5)
            eligible = obs & cond
        drop = eligible & (u < p)
        mask = rec.mask.copy()
        mask[drop] = 0
        records.append(MtsRecord(values=np.where(mask.astype(bool), rec.values, 0.0),
                                 mask=mask, id=rec.id))
    return Dataset(records=records, labels=None if d.labels is None else d.labels.copy())


def mean_impute(d: Dataset) -> Dataset:
    """Fill every missing cell with the dataset-level observed mean at its (v, t).

    Returns a fully observed dataset; used for imputation-based baselines.
    """
    x, m = d.to_arrays()
    obs = m.astype(bool)
    counts = obs.sum(axis=0)
    if (counts == 0).any():
        v_i, t_i = np.argwhere(counts == 0)[0]
        raise DataError(f"cannot impute: no observed value at attribute {v_i}, time {t_i}")
    means = np.where(obs, x, 0.0).sum(axis=0) / counts
    records = []
    for rec in d.records:
        vals = np.where(rec.mask.astype(bool), rec.values, means)
        records.append(MtsRecord(values=vals, mask=np.ones_like(rec.mask), id=rec.id))
    return Dataset(records=records, labels=None if d.labels is None else d.labels.copy())


def concatenate_attributes(d: Dataset) -> Dataset:
    """Flatten each V x T series into a single 1 x (V*T) series.

    Yields the univariate representation used to contrast against the
    multivariate kernel.
    """
    records = []
    for rec in d.records:
        records.append(MtsRecord(values=rec.values.reshape(1, -1),
                                 mask=rec.mask.reshape(1, -1), id=rec.id))
    return Dataset(records=records, labels=None if d.labels is None else d.labels.copy())
