"""Ensemble construction of the cluster kernel, out-of-sample evaluation,
induced pseudo-metric and model persistence.

The kernel between two series is the sum, over an ensemble of randomized
mixture fits, of inner products of their posterior component-membership
vectors. Each ensemble member fits a masked-MTS mixture on a random series
subset, attribute subset and contiguous time segment with random prior
hyperparameters; members accumulate rank-structured contributions
``K += P P^T`` where P stacks the member's posteriors for all series.
Contributions are always summed in member-index order, so results do not
depend on worker scheduling.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from . import gmm
from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError

_MODEL_MAGIC = "mts-cluster-kernel-model"
_MODEL_VERSION = 1

# Uniform sampling intervals for the prior hyperparameters.
_A0_RANGE = (0.001, 1.0)
_B0_RANGE = (0.005, 0.2)
_N0_RANGE = (0.001, 0.2)


@dataclass(frozen=True)
class EnsembleSpec:
    """Randomization plan for the ensemble.

    ``q_initializations`` random restarts are crossed with every component
    count in [2, c_max]. Segment lengths, attribute subsets and series
    subsets are drawn uniformly within the stated bounds.
    """

    q_initializations: int = 30
    c_max: int = 40
    t_min: Optional[int] = None       # default min(6, T)
    t_max: Optional[int] = None       # default T
    v_min: Optional[int] = None       # default min(2, V)
    v_max: Optional[int] = None       # default V
    n_min_fraction: float = 0.8
    seed: int = 0
    max_iter: int = 20
    tol: float = 1e-3

    def resolve(self, n: int, v: int, t: int) -> "EnsembleSpec":
        """Fill unset bounds from the data shape and validate everything."""
        t_min = min(6, t) if self.t_min is None else self.t_min
        t_max = t if self.t_max is None else self.t_max
        v_min = min(2, v) if self.v_min is None else self.v_min
        v_max = v if self.v_max is None else self.v_max
        spec = EnsembleSpec(q_initializations=self.q_initializations, c_max=self.c_max,
                            t_min=t_min, t_max=t_max, v_min=v_min, v_max=v_max,
                            n_min_fraction=self.n_min_fraction, seed=self.seed,
                            max_iter=self.max_iter, tol=self.tol)
        if spec.q_initializations < 1:
            raise ConfigError("need at least one initialization")
        if spec.c_max < 2:
            raise ConfigError(f"component cap must be >= 2, got {spec.c_max}")
        if not 1 <= spec.t_min <= spec.t_max <= t:
            raise ConfigError(f"segment bounds [{spec.t_min}, {spec.t_max}] invalid for T={t}")
        if not 1 <= spec.v_min <= spec.v_max <= v:
            raise ConfigError(f"attribute bounds [{spec.v_min}, {spec.v_max}] invalid for V={v}")
        if not 0.0 < spec.n_min_fraction <= 1.0:
            raise ConfigError(f"n_min_fraction must be in (0, 1], got {spec.n_min_fraction}")
        return spec


def default_component_cap(n: int) -> int:
    """40 components in general, 10 for small datasets (fewer than 100 series)."""
    return 10 if n < 100 else 40


@dataclass(frozen=True)
class MemberConfig:
    """Randomization record for one ensemble member."""

    q1: int                   # initialization index, 1-based
    q2: int                   # component count
    hyper: gmm.GmmHyperParams
    segment: tuple            # (start, stop), half-open time range
    attributes: tuple         # sorted attribute indices
    train_subset: tuple       # sorted series indices used for fitting
    member_seed: int


@dataclass
class TckModel:
    """Fitted ensemble members plus stored training posteriors."""

    members: list             # [(MemberConfig, GmmParams)]
    train_posteriors: list    # per member, (N, q2) array
    n_train: int
    train_ids: list
    failures: list = field(default_factory=list)  # [(MemberConfig, reason)]
    # Optional record of the preprocessing applied before training
    # (standardization moments, resample target); the CLI replays it on test
    # data so restrictions line up.
    preprocess: Optional[dict] = None


@dataclass
class KernelMatrix:
    """Similarity matrix with row/column identifiers.

    Square training kernels are symmetric PSD; train-by-test kernels are
    rectangular and carry the training self-similarities in ``train_diag``
    so distances can be formed without the square training kernel.
    """

    entries: np.ndarray
    row_ids: list
    col_ids: list
    train_diag: Optional[np.ndarray] = None


def sample_member_configs(spec: EnsembleSpec, n: int, v: int, t: int) -> list:
    """One config per (initialization, component count) pair, seeded from
    spec.seed through per-member spawned generators."""
    spec = spec.resolve(n, v, t)
    n_min = math.ceil(spec.n_min_fraction * n)
    children = np.random.SeedSequence(spec.seed).spawn(
        spec.q_initializations * (spec.c_max - 1))
    configs = []
    i = 0
    for q1 in range(1, spec.q_initializations + 1):
        for q2 in range(2, spec.c_max + 1):
            rng = np.random.default_rng(children[i])
            i += 1
            hyper = gmm.GmmHyperParams(a0=rng.uniform(*_A0_RANGE),
                                       b0=rng.uniform(*_B0_RANGE),
                                       n0=rng.uniform(*_N0_RANGE))
            seg_len = int(rng.integers(spec.t_min, spec.t_max + 1))
            start = int(rng.integers(0, t - seg_len + 1))
            v_size = int(rng.integers(spec.v_min, spec.v_max + 1))
            attrs = tuple(sorted(rng.choice(v, size=v_size, replace=False).tolist()))
            n_size = int(rng.integers(n_min, n + 1))
            subset = tuple(sorted(rng.choice(n, size=n_size, replace=False).tolist()))
            configs.append(MemberConfig(q1=q1, q2=q2, hyper=hyper,
                                        segment=(start, start + seg_len),
                                        attributes=attrs, train_subset=subset,
                                        member_seed=int(rng.integers(2 ** 63))))
    return configs


def _restrict(x: np.ndarray, r: np.ndarray, config: MemberConfig):
    attrs = np.asarray(config.attributes, dtype=np.intp)
    start, stop = config.segment
    return (np.ascontiguousarray(x[:, attrs, start:stop]),
            np.ascontiguousarray(r[:, attrs, start:stop]).astype(np.float64))


def _fit_member(x: np.ndarray, r: np.ndarray, config: MemberConfig,
                max_iter: int = 20, tol: float = 1e-3):
    """Fit one member and return (params, posteriors over all N series) or a
    failure reason string."""
    xs, rs = _restrict(x, r, config)
    sub = np.asarray(config.train_subset, dtype=np.intp)
    try:
        params, _ = gmm.fit_map_em(xs[sub], rs[sub], config.q2, config.hyper,
                                   seed=config.member_seed, max_iter=max_iter, tol=tol)
        post = gmm.e_step(xs, rs, params)
    except (NumericError, DataError, np.linalg.LinAlgError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    return params, post, None


def train_tck(d: Dataset, spec: EnsembleSpec, n_jobs: int = 1):
    """Fit all ensemble members and accumulate the training kernel.

    Members whose fit fails numerically are skipped and recorded; the kernel
    reflects only successful members. Returns (TckModel, KernelMatrix).
    """
    n = len(d)
    if n < 2:
        raise DataError(f"need at least 2 series to train, got {n}")
    x, r = d.to_arrays()
    configs = sample_member_configs(spec, n, d.n_attributes, d.length)

    kw = {"max_iter": spec.max_iter, "tol": spec.tol}
    if n_jobs == 1:
        results = [_fit_member(x, r, c, **kw) for c in configs]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_fit_member)(x, r, c, **kw)
                                          for c in configs)

    members, posteriors, failures = [], [], []
    k = np.zeros((n, n))
    for config, (params, post, reason) in zip(configs, results):
        if reason is not None:
            failures.append((config, reason))
            continue
        members.append((config, params))
        posteriors.append(post)
        k += post @ post.T
    if not members:
        raise NumericError("every ensemble member failed to fit")
    k = 0.5 * (k + k.T)  # exact symmetry despite float accumulation order
    model = TckModel(members=members, train_posteriors=posteriors, n_train=n,
                     train_ids=d.ids, failures=failures)
    return model, KernelMatrix(entries=k, row_ids=d.ids, col_ids=d.ids,
                               train_diag=np.diag(k).copy())


def posterior_for(record, config: MemberConfig, params: gmm.GmmParams) -> np.ndarray:
    """Posterior component-membership vector of a single series under one
    member, restricting to the member's attributes and time segment."""
    start, stop = config.segment
    if record.n_attributes <= max(config.attributes) or record.length < stop:
        raise DataError(
            f"series {record.id!r} shape ({record.n_attributes}, {record.length}) "
            f"incompatible with member restriction {config.attributes} x {config.segment}")
    x = np.where(record.mask.astype(bool), record.values, 0.0)[None]
    r = record.mask.astype(np.float64)[None]
    xs, rs = _restrict(x, r, config)
    return gmm.e_step(xs, rs, params)[0]


def test_kernel(model: TckModel, test: Dataset) -> KernelMatrix:
    """Train-by-test kernel over the same member set used in training."""
    x, r = test.to_arrays()
    n_v, t = test.n_attributes, test.length
    for config, _ in model.members:
        if n_v <= max(config.attributes) or t < config.segment[1]:
            raise DataError(
                f"test shape ({n_v}, {t}) incompatible with member restriction "
                f"{config.attributes} x {config.segment}")
    k = np.zeros((model.n_train, len(test)))
    diag = np.zeros(model.n_train)
    for (config, params), train_post in zip(model.members, model.train_posteriors):
        xs, rs = _restrict(x, r, config)
        post = gmm.e_step(xs, rs, params)
        k += train_post @ post.T
        diag += (train_post * train_post).sum(axis=1)
    return KernelMatrix(entries=k, row_ids=list(model.train_ids), col_ids=test.ids,
                        train_diag=diag)


def kernel_distance(k_nn: float, k_nm: float, k_mm: float) -> float:
    """Pseudo-metric induced by the kernel: sqrt(K(n,n) - 2K(n,m) + K(m,m)),
    clipped at zero against round-off."""
    return math.sqrt(max(0.0, k_nn - 2.0 * k_nm + k_mm))


def normalize_kernel(k: KernelMatrix) -> KernelMatrix:
    """Cosine normalization K_nm / sqrt(K_nn K_mm) of a square kernel."""
    d = np.sqrt(np.diag(k.entries))
    if (d <= 0).any():
        raise NumericError("cannot normalize: non-positive diagonal entry")
    return KernelMatrix(entries=k.entries / np.outer(d, d),
                        row_ids=list(k.row_ids), col_ids=list(k.col_ids))


def _encode(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    expected = int(np.prod(obj["shape"])) if obj["shape"] else 1
    if arr.size != expected:
        raise DataError("model file truncated: array payload has wrong size")
    return arr.reshape(obj["shape"])


def save_model(model: TckModel, path) -> None:
    """Persist the model as versioned JSON with base64 float64 arrays."""
    doc = {
        "magic": _MODEL_MAGIC,
        "version": _MODEL_VERSION,
        "n_train": model.n_train,
        "train_ids": list(model.train_ids),
        "preprocess": model.preprocess,
        "failures": [{"config": _config_doc(c), "reason": reason}
                     for c, reason in model.failures],
        "members": [
            {
                "config": _config_doc(config),
                "weights": _encode(params.weights),
                "means": _encode(params.means),
                "stds": _encode(params.stds),
                "posteriors": _encode(post),
            }
            for (config, params), post in zip(model.members, model.train_posteriors)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _config_doc(c: MemberConfig) -> dict:
    doc = asdict(c)
    doc["hyper"] = asdict(c.hyper)
    return doc


def _config_from_doc(doc: dict) -> MemberConfig:
    return MemberConfig(q1=doc["q1"], q2=doc["q2"],
                        hyper=gmm.GmmHyperParams(**doc["hyper"]),
                        segment=tuple(doc["segment"]),
                        attributes=tuple(doc["attributes"]),
                        train_subset=tuple(doc["train_subset"]),
                        member_seed=doc["member_seed"])


def load_model(path) -> TckModel:
    """Inverse of save_model; rejects wrong-magic and truncated files."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("magic") != _MODEL_MAGIC:
        raise DataError(f"{path}: wrong magic header, not a model file")
    if doc.get("version") != _MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {doc.get('version')!r}")
    members, posteriors = [], []
    for m in doc["members"]:
        config = _config_from_doc(m["config"])
        params = gmm.GmmParams(weights=_decode(m["weights"]),
                               means=_decode(m["means"]), stds=_decode(m["stds"]))
        members.append((config, params))
        posteriors.append(_decode(m["posteriors"]))
    failures = [(_config_from_doc(f["config"]), f["reason"])
                for f in doc.get("failures", [])]
    return TckModel(members=members, train_posteriors=posteriors,
                    n_train=doc["n_train"], train_ids=list(doc["train_ids"]),
                    failures=failures, preprocess=doc.get("preprocess"))


def save_kernel_csv(k: KernelMatrix, path) -> None:
    """Kernel matrix as CSV with column ids in the header and row ids in the
    first column."""
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["id"] + list(k.col_ids))
        for rid, row in zip(k.row_ids, k.entries):
            writer.writerow([rid] + [repr(float(v)) for v in row])


def load_kernel_csv(path) -> KernelMatrix:
    import csv as _csv
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise DataError(f"{path}: kernel CSV header must start with 'id'")
        col_ids = header[1:]
        row_ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: ragged kernel row")
            row_ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric kernel entry") from None
    if not rows:
        raise DataError(f"{path}: empty kernel matrix")
    entries = np.array(rows)
    diag = np.diag(entries).copy() if row_ids == col_ids else None
    return KernelMatrix(entries=entries, row_ids=row_ids, col_ids=col_ids,
                        train_diag=diag)
