"""Command-line interface.

Commands: simulate, inject, train, test-kernel, classify, embed, cluster,
eval. Every run resolves its parameters from built-in defaults, then an
optional flat key=value config file, then explicit command-line flags, and
writes a metadata.json echoing the resolved configuration so the run can be
reproduced. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import dataset as ds
from . import ensemble as ens
from . import plots, reporting, tasks, var1
from .errors import ConfigError, DataError, NumericError


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, DataError):
        return 3
    return 4


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DataError, NumericError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))

    return wrapper


def load_config_file(path) -> dict:
    """Flat key=value file; blank lines and # comments ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw, pytype):
    try:
        if pytype is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        return pytype(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {pytype.__name__}") from None


def resolve_options(schema: dict, cli_values: dict, config_path) -> dict:
    """Merge defaults <- config file <- explicit CLI flags.

    ``schema`` maps key -> (default, type); unknown config keys are rejected.
    CLI values equal to None count as unset.
    """
    resolved = {k: default for k, (default, _) in schema.items()}
    if config_path is not None:
        for key, raw in load_config_file(config_path).items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r} "
                                  f"(known: {', '.join(sorted(schema))})")
            resolved[key] = _coerce(key, raw, schema[key][1])
    for key, value in cli_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metadata(out: Path, command: str, resolved: dict, notes=None) -> None:
    doc = {"command": command, "package_version": __version__,
           "config": {k: v for k, v in sorted(resolved.items())}}
    if notes:
        doc["notes"] = notes
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, default=str)


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _default_threads() -> int:
    return os.cpu_count() or 1


def _make_spec(cfg, n: int) -> ens.EnsembleSpec:
    c_max = cfg["c_max"] if cfg["c_max"] > 0 else ens.default_component_cap(n)
    return ens.EnsembleSpec(
        q_initializations=cfg["q"], c_max=c_max,
        t_min=cfg["t_min"] if cfg["t_min"] > 0 else None,
        t_max=cfg["t_max"] if cfg["t_max"] > 0 else None,
        v_min=cfg["v_min"] if cfg["v_min"] > 0 else None,
        v_max=cfg["v_max"] if cfg["v_max"] > 0 else None,
        n_min_fraction=cfg["n_min_fraction"], seed=cfg["seed"])


# Ensemble-related schema entries shared by train and eval. Zero means
# "derive from the data shape".
_ENSEMBLE_SCHEMA = {
    "q": (30, int),
    "c_max": (0, int),
    "t_min": (0, int),
    "t_max": (0, int),
    "v_min": (0, int),
    "v_max": (0, int),
    "n_min_fraction": (0.8, float),
    "resample_cap": (25, int),
}


def _preprocess_train(d: ds.Dataset, cap: int):
    mean, std = ds.pooled_moments(d)
    d = ds.apply_standardization(d, mean, std)
    d = ds.resample_length(d, cap)
    block = {"mean": mean.tolist(), "std": std.tolist(),
             "resample_cap": cap, "target_length": d.length}
    return d, block


def _preprocess_test(model: ens.TckModel, d: ds.Dataset) -> ds.Dataset:
    pp = model.preprocess
    if not pp:
        return d
    d = ds.apply_standardization(d, pp["mean"], pp["std"])
    d = ds.resample_length(d, pp["resample_cap"])
    if d.length != pp["target_length"]:
        raise DataError(f"test series resample to length {d.length}, "
                        f"model expects {pp['target_length']}")
    return d


def _read_train_labels(path, train_ids) -> np.ndarray:
    label_map = ds._load_label_map(path)
    missing = [sid for sid in train_ids if sid not in label_map]
    if missing:
        raise DataError(f"{path}: no label for training series {missing[:5]}")
    return np.array([label_map[sid] for sid in train_ids], dtype=np.int64)


@click.group()
@click.version_option(__version__)
def main():
    """Positive-semidefinite similarity for multivariate time series with
    missing data, built from an ensemble of mixture-model clusterings."""


def common_options(fn):
    fn = click.option("--seed", type=int, default=None, help="Global random seed.")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="Worker processes for member fitting (default: all cores).")(fn)
    fn = click.option("--deterministic", is_flag=True, default=None,
                      help="Force deterministic reduction (member contributions are "
                           "always summed in member order, so this is the default "
                           "behavior; the flag is accepted for scripting symmetry).")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="Flat key=value config file; CLI flags override it.")(fn)
    fn = click.option("--out-dir", type=click.Path(), default=None, help="Output directory.")(fn)
    return fn


_COMMON_SCHEMA = {
    "seed": (0, int),
    "threads": (0, int),   # 0 -> all cores
    "deterministic": (False, bool),
    "out_dir": (".", str),
}


def _resolve_common(schema, config_path, **cli):
    full = dict(_COMMON_SCHEMA)
    full.update(schema)
    cfg = resolve_options(full, cli, config_path)
    if cfg["threads"] <= 0:
        cfg["threads"] = _default_threads()
    return cfg


@main.command()
@common_options
@click.option("--n-per-class", type=int, default=None)
@click.option("--length", type=int, default=None)
@handle_errors
def simulate(config_path, **cli):
    """Generate the two-class VAR(1) benchmark (train/test CSVs plus labels)."""
    cfg = _resolve_common({"n_per_class": (100, int), "length": (50, int)},
                          config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    train, test = var1.make_var1_benchmark(cfg["seed"], n_per_class=cfg["n_per_class"],
                                           length=cfg["length"])
    ds.save_dataset(train, out / "train.csv", out / "train_labels.csv")
    ds.save_dataset(test, out / "test.csv", out / "test_labels.csv")
    write_metadata(out, "simulate", cfg,
                   notes={"noise_marginal_variance": 1.0, "burn_in": 100})
    click.echo(f"wrote {len(train)} train and {len(test)} test series to {out}")


@main.command()
@common_options
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--labels", type=click.Path(exists=True), default=None)
@click.option("--pattern", type=click.Choice(["MCAR", "MAR", "MNAR"], case_sensitive=False),
              default=None)
@click.option("--p-grid", default=None,
              help="Comma-separated missing fractions, e.g. '0,0.1,0.2'.")
@handle_errors
def inject(config_path, data, labels, **cli):
    """Inject synthetic missingness into a dataset at one or more levels."""
    cfg = _resolve_common({"pattern": ("MCAR", str), "p_grid": ("0.1", str)},
                          config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    d = ds.load_dataset(data, labels)
    try:
        levels = [float(tok) for tok in cfg["p_grid"].split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse p_grid {cfg['p_grid']!r}") from None
    if not levels:
        raise ConfigError("p_grid is empty")
    for p in levels:
        injected = ds.inject_missing(d, cfg["pattern"], p,
                                     seed=_derived_seed(cfg["seed"], round(p * 1000)))
        ds.save_dataset(injected, out / f"injected_p{p:.2f}.csv")
    if d.labels is not None:
        with open(out / "labels.csv", "w", encoding="utf-8") as fh:
            fh.write("id,label\n")
            for rec, lab in zip(d.records, d.labels):
                fh.write(f"{rec.id},{int(lab)}\n")
    write_metadata(out, "inject", cfg,
                   notes={"levels": levels,
                          "order": "thresholds for MAR/MNAR assume standardized input"})
    click.echo(f"wrote {len(levels)} injected dataset(s) to {out}")


@main.command()
@common_options
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--labels", type=click.Path(exists=True), default=None)
@click.option("--q", type=int, default=None, help="Random initializations per component count.")
@click.option("--c-max", type=int, default=None,
              help="Component cap (default: 40, or 10 when N < 100).")
@click.option("--resample-cap", type=int, default=None)
@handle_errors
def train(config_path, data, labels, **cli):
    """Standardize, resample and fit the kernel ensemble; writes the model
    file and the training kernel CSV."""
    cfg = _resolve_common(dict(_ENSEMBLE_SCHEMA), config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    d = ds.load_dataset(data, labels)
    d, pre_block = _preprocess_train(d, cfg["resample_cap"])
    spec = _make_spec(cfg, len(d))
    model, kernel = ens.train_tck(d, spec, n_jobs=cfg["threads"])
    model.preprocess = pre_block
    ens.save_model(model, out / "model.json")
    ens.save_kernel_csv(kernel, out / "kernel_train.csv")
    write_metadata(out, "train", cfg,
                   notes={"n_members": len(model.members),
                          "n_failed_members": len(model.failures),
                          "c_max_used": spec.c_max,
                          "order": "standardize_then_resample"})
    click.echo(f"trained {len(model.members)} members "
               f"({len(model.failures)} failed); outputs in {out}")


@main.command("test-kernel")
@common_options
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@handle_errors
def test_kernel_cmd(config_path, model_path, data, **cli):
    """Evaluate the train-by-test kernel for out-of-sample series."""
    cfg = _resolve_common({}, config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    model = ens.load_model(model_path)
    d = _preprocess_test(model, ds.load_dataset(data))
    kernel = ens.test_kernel(model, d)
    ens.save_kernel_csv(kernel, out / "kernel_test.csv")
    write_metadata(out, "test-kernel", cfg, notes={"model": str(model_path)})
    click.echo(f"wrote {kernel.entries.shape[0]}x{kernel.entries.shape[1]} kernel to {out}")


@main.command()
@common_options
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--train-labels", type=click.Path(exists=True), required=True)
@click.option("--test-labels", type=click.Path(exists=True), default=None)
@click.option("-k", "--neighbors", type=int, default=None)
@handle_errors
def classify(config_path, model_path, data, train_labels, test_labels, **cli):
    """Nearest-neighbor classification of test series against the model's
    training set."""
    cfg = _resolve_common({"neighbors": (1, int)}, config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    model = ens.load_model(model_path)
    d = _preprocess_test(model, ds.load_dataset(data, test_labels))
    labels = _read_train_labels(train_labels, model.train_ids)
    kernel = ens.test_kernel(model, d)
    preds = tasks.knn_classify(kernel, labels, k=cfg["neighbors"])
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("id,label\n")
        for sid, lab in zip(d.ids, preds):
            fh.write(f"{sid},{int(lab)}\n")
    notes = {"k": cfg["neighbors"]}
    if d.labels is not None:
        acc = float((preds == d.labels).mean())
        notes["accuracy"] = acc
        click.echo(f"accuracy: {acc:.4f}")
    write_metadata(out, "classify", cfg, notes=notes)
    click.echo(f"wrote predictions for {len(preds)} series to {out}")


@main.command()
@common_options
@click.option("--kernel", "kernel_path", type=click.Path(exists=True), required=True)
@click.option("--labels", type=click.Path(exists=True), default=None)
@click.option("--dims", type=int, default=None)
@handle_errors
def embed(config_path, kernel_path, labels, **cli):
    """Kernel PCA embedding of a square kernel; writes coordinates and a
    scatter figure."""
    cfg = _resolve_common({"dims": (2, int)}, config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    kernel = ens.load_kernel_csv(kernel_path)
    emb = tasks.kpca(kernel, cfg["dims"])
    lab = None
    if labels is not None:
        lab = _read_train_labels(labels, kernel.row_ids)
    with open(out / "embedding.csv", "w", encoding="utf-8") as fh:
        cols = ",".join(f"x{j + 1}" for j in range(cfg["dims"]))
        fh.write(f"id,{cols},label\n" if lab is not None else f"id,{cols}\n")
        for i, sid in enumerate(kernel.row_ids):
            coords = ",".join(repr(float(v)) for v in emb.coordinates[i])
            fh.write(f"{sid},{coords},{int(lab[i])}\n" if lab is not None
                     else f"{sid},{coords}\n")
    plots.scatter_embedding(emb.coordinates, lab, out / "embedding.png")
    write_metadata(out, "embed", cfg,
                   notes={"eigenvalues": [float(v) for v in emb.eigenvalues]})
    click.echo(f"wrote {cfg['dims']}-d embedding for {len(kernel.row_ids)} series to {out}")


@main.command()
@common_options
@click.option("--kernel", "kernel_path", type=click.Path(exists=True), required=True)
@click.option("--labels", type=click.Path(exists=True), default=None,
              help="Ground-truth labels; enables CA/ARI and the default k.")
@click.option("-k", "--n-clusters", type=int, default=None)
@handle_errors
def cluster(config_path, kernel_path, labels, **cli):
    """Spectral clustering of a square kernel used as an affinity matrix."""
    cfg = _resolve_common({"n_clusters": (0, int)}, config_path, **cli)
    out = _out_dir(cfg["out_dir"])
    kernel = ens.load_kernel_csv(kernel_path)
    truth = None
    if labels is not None:
        truth = _read_train_labels(labels, kernel.row_ids)
    k = cfg["n_clusters"]
    if k <= 0:
        if truth is None:
            raise ConfigError("-k is required when no labels are given")
        k = len(np.unique(truth))
    result = tasks.spectral_cluster(kernel, k, seed=cfg["seed"])
    with open(out / "clusters.csv", "w", encoding="utf-8") as fh:
        fh.write("id,cluster\n")
        for sid, lab in zip(kernel.row_ids, result.labels):
            fh.write(f"{sid},{int(lab)}\n")
    notes = {"k": k}
    if truth is not None:
        notes["ca"] = tasks.clustering_accuracy(result.labels, truth)
        notes["ari"] = tasks.adjusted_rand_index(result.labels, truth)
        click.echo(f"CA: {notes['ca']:.4f}  ARI: {notes['ari']:.4f}")
    write_metadata(out, "cluster", cfg, notes=notes)
    click.echo(f"wrote cluster labels to {out}")


@main.command("eval")
@common_options
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--train-labels", type=click.Path(exists=True), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--test-labels", type=click.Path(exists=True), required=True)
@click.option("--pattern", type=click.Choice(["MCAR", "MAR", "MNAR"], case_sensitive=False),
              default=None)
@click.option("--missing-grid", default=None,
              help="Comma-separated missing fractions to sweep (default '0').")
@click.option("--sweep", default=None,
              help="Component-cap/initialization pairs 'C:Q,C:Q' evaluated at p=0.")
@click.option("--cluster-k", type=int, default=None)
@click.option("--q", type=int, default=None)
@click.option("--c-max", type=int, default=None)
@click.option("--resample-cap", type=int, default=None)
@handle_errors
def eval_cmd(config_path, train_path, train_labels, test_path, test_labels, **cli):
    """Full evaluation: per-missingness 1NN accuracy, spectral clustering
    metrics, and an optional (C, Q) sensitivity sweep. Writes report.json,
    accuracy.csv and figures."""
    schema = dict(_ENSEMBLE_SCHEMA)
    schema.update({"pattern": ("MCAR", str), "missing_grid": ("0", str),
                   "sweep": ("", str), "cluster_k": (0, int)})
    cfg = _resolve_common(schema, config_path, **cli)
    out = _out_dir(cfg["out_dir"])

    train_raw = ds.load_dataset(train_path, train_labels)
    test_raw = ds.load_dataset(test_path, test_labels)
    try:
        levels = [float(tok) for tok in cfg["missing_grid"].split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse missing_grid {cfg['missing_grid']!r}") from None
    if not levels:
        raise ConfigError("missing_grid is empty")
    sweep_pairs = []
    for tok in cfg["sweep"].split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            c_str, q_str = tok.split(":")
            sweep_pairs.append((int(c_str), int(q_str)))
        except ValueError:
            raise ConfigError(f"cannot parse sweep entry {tok!r}, expected 'C:Q'") from None

    def run_once(p, c_max, q):
        dtr, dte = train_raw, test_raw
        mean, std = ds.pooled_moments(dtr)
        dtr = ds.apply_standardization(dtr, mean, std)
        dte = ds.apply_standardization(dte, mean, std)
        if p > 0:
            dtr = ds.inject_missing(dtr, cfg["pattern"], p,
                                    seed=_derived_seed(cfg["seed"], round(p * 1000), 0))
            dte = ds.inject_missing(dte, cfg["pattern"], p,
                                    seed=_derived_seed(cfg["seed"], round(p * 1000), 1))
        dtr = ds.resample_length(dtr, cfg["resample_cap"])
        dte = ds.resample_length(dte, cfg["resample_cap"])
        local = dict(cfg)
        local["c_max"], local["q"] = c_max, q
        spec = _make_spec(local, len(dtr))
        model, kernel = ens.train_tck(dtr, spec, n_jobs=cfg["threads"])
        kstar = ens.test_kernel(model, dte)
        preds = tasks.knn_classify(kstar, dtr.labels)
        acc = float((preds == dte.labels).mean())
        return acc, kernel, dtr.labels

    missing_results = []
    clean_kernel = clean_labels = None
    for p in sorted(levels):
        acc, kernel, labels = run_once(p, cfg["c_max"], cfg["q"])
        missing_results.append({"p": p, "accuracy": acc})
        click.echo(f"p={p:.2f}: 1NN accuracy {acc:.4f}")
        if p == 0 or clean_kernel is None:
            clean_kernel, clean_labels = kernel, labels

    clustering = None
    k = cfg["cluster_k"] if cfg["cluster_k"] > 0 else len(np.unique(clean_labels))
    result = tasks.spectral_cluster(clean_kernel, k, seed=cfg["seed"])
    clustering = {"k": k,
                  "ca": tasks.clustering_accuracy(result.labels, clean_labels),
                  "ari": tasks.adjusted_rand_index(result.labels, clean_labels)}
    click.echo(f"spectral clustering (k={k}): CA {clustering['ca']:.4f} "
               f"ARI {clustering['ari']:.4f}")

    sweep_results = None
    if sweep_pairs:
        sweep_results = []
        for c_max, q in sweep_pairs:
            acc, _, _ = run_once(0.0, c_max, q)
            sweep_results.append({"c_max": c_max, "q": q, "accuracy": acc})
            click.echo(f"C={c_max} Q={q}: 1NN accuracy {acc:.4f}")
        plots.sensitivity_bars(sweep_pairs, [r["accuracy"] for r in sweep_results],
                               out / "sensitivity.png")

    report = reporting.build_report(cfg["pattern"], missing_results,
                                    sweep_results=sweep_results, clustering=clustering)
    reporting.save_report(report, out / "report.json")
    reporting.save_accuracy_csv(missing_results, out / "accuracy.csv")
    if len(missing_results) > 1:
        plots.missingness_curve([r["p"] for r in missing_results],
                                [r["accuracy"] for r in missing_results],
                                out / "accuracy_vs_missing.png", pattern=cfg["pattern"])
    write_metadata(out, "eval", cfg,
                   notes={"order": "standardize_then_inject_then_resample"})
    click.echo(f"wrote report to {out}")


if __name__ == "__main__":
    main()
