"""Experiment driver.

Subcommands: gen-data, train, interpret, evaluate, sweep-b, shift, ablate,
gradcheck, report. Every invocation writes a RunRecord JSON into the results
directory (``--results-dir`` flag, else ``$LRI_RESULTS_DIR``, else
``./results``). Exit codes: 0 success, 1 validation/config error, 2 gradient
suite failure.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import sys
import time
from pathlib import Path

import click
import numpy as np

from .config import (_FIELD_TYPES, ExperimentConfig, RunRecord, _parse_value,
                     derive_seed, load_config)
from .exceptions import ConfigError, LRIError
from .gradcheck import GRAD_TOL, run_suite
from .io import (load_samples, read_scores, results_dir, save_samples,
                 write_manifest, write_scores)
from .metrics import interpretation_report, mean_std
from .estimators import load_model, save_model
from .protocols import (field_sweep, multi_seed_runs, prepared_for,
                        shift_table, soft_graph_ablation, split_samples,
                        test_classification, test_interpretation)
from .synth import (HelixParams, MotifParams, generate_helix_dataset,
                    generate_motif_dataset)
from .train import train_model


class _GradcheckFailure(Exception):
    pass


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays so records serialize."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_record(record: RunRecord, results_root):
    for name in ("history", "interpretation", "fine_grained", "extra"):
        val = getattr(record, name)
        if val is not None:
            setattr(record, name, _jsonable(val))
    path = record.write(results_dir(results_root))
    click.echo(f"run record: {path}")
    return path


def _parse_sets(pairs):
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = (p.strip() for p in pair.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = _parse_value(_FIELD_TYPES[key], raw, key)
    return overrides


def _coerce_param(default, raw, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
            cast = int if all(isinstance(v, int) for v in default) else float
            return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"cannot parse dataset param {key!r}: {raw!r}") from exc
    return raw


def _load_dataset_params(cls, path, sets):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    values = {}
    raw_items = []
    if path:
        with open(path) as fh:
            for i, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{i}: expected 'key = value'")
                raw_items.append(tuple(p.strip() for p in line.split("=", 1)))
    for pair in sets or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        raw_items.append(tuple(p.strip() for p in pair.split("=", 1)))
    for key, raw in raw_items:
        if key not in defaults:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        values[key] = _coerce_param(defaults[key], raw, key)
    return cls(**values)


def _int_list(raw):
    return [int(v) for v in str(raw).split(",") if v.strip()]


def _float_list(raw):
    return [float(v) for v in str(raw).split(",") if v.strip()]


def _write_csv(path, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})
    return path


@click.group()
def cli():
    """Interpretable point-cloud learning experiments."""


@cli.command("gen-data")
@click.option("--dataset", type=click.Choice(["helix", "motif"]), required=True)
@click.option("--params", "params_file", type=click.Path(exists=True), default=None,
              help="Flat key=value file of generator parameters.")
@click.option("--set", "sets", multiple=True, help="Override a generator parameter.")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--results-dir", "results_root", default=None)
def gen_data(dataset, params_file, sets, n, seed, out, results_root):
    """Generate a synthetic dataset (JSONL) plus its manifest."""
    t0 = time.time()
    if dataset == "helix":
        params = _load_dataset_params(HelixParams, params_file, sets)
        samples = generate_helix_dataset(params, n, seed)
    else:
        params = _load_dataset_params(MotifParams, params_file, sets)
        samples = generate_motif_dataset(params, n, seed)
    path = save_samples(samples, out)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    stats = {
        "n_samples": len(samples),
        "avg_points": float(np.mean([s.n for s in samples])),
        "avg_important_points": float(np.mean([int(s.interp.sum()) for s in samples])),
        "class_ratio": float(np.mean([s.y for s in samples])),
    }
    manifest = {"dataset": dataset, "seed": seed, "file": str(path),
                "sha256": digest, "params": _jsonable(dataclasses.asdict(params)),
                **stats}
    manifest_path = write_manifest(str(path) + ".manifest.json", manifest)
    click.echo(f"dataset: {dataset}  file: {path}")
    click.echo(f"samples: {stats['n_samples']}  "
               f"avg points/sample: {stats['avg_points']:.1f}  "
               f"avg important points/sample: {stats['avg_important_points']:.1f}  "
               f"positive fraction: {stats['class_ratio']:.3f}")
    record = RunRecord(config=_jsonable(dataclasses.asdict(params)),
                       command="gen-data", seed=seed,
                       wall_clock_s=time.time() - t0,
                       extra={"manifest": str(manifest_path), **stats})
    _write_record(record, results_root)


@cli.command()
@click.option("--method", type=str, default=None,
              help="erm | lri-bernoulli | lri-gaussian (overrides config file).")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True, help="Override a config key.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "model_out", type=click.Path(), default=None,
              help="Checkpoint path (default: <results>/model-<method>-<seed>.npz).")
@click.option("--split-scheme", type=click.Choice(["random", "balanced-motif"]),
              default="random", show_default=True)
@click.option("--split-seed", type=int, default=0, show_default=True)
@click.option("--results-dir", "results_root", default=None)
def train(method, data_path, config_path, sets, seed, model_out, split_scheme,
          split_seed, results_root):
    """Train a model and checkpoint the best-validation-AUC epoch."""
    t0 = time.time()
    overrides = _parse_sets(sets)
    if method is not None:
        overrides["method"] = method
    if seed is not None:
        overrides["seed"] = seed
    config = load_config(config_path, overrides)
    samples = load_samples(data_path)
    split = split_samples(samples, scheme=split_scheme, seed=split_seed)
    out = train_model(config, split.train, split.val, log=click.echo)
    test_auc = test_classification(out, split.test) if split.test else None
    root = results_dir(results_root)
    model_path = Path(model_out) if model_out else root / f"model-{config.method}-{config.seed}.npz"
    save_model(model_path, out, extra_meta={"data": str(data_path),
                                            "split_scheme": split_scheme,
                                            "split_seed": split_seed})
    click.echo(f"best val AUC: {out.best_val_auc:.2f} (epoch {out.best_epoch})")
    if test_auc is not None:
        click.echo(f"test classification AUC: {test_auc:.2f}")
    click.echo(f"model: {model_path}")
    record = RunRecord(config=config.to_dict(), command="train", seed=config.seed,
                       wall_clock_s=time.time() - t0,
                       history={"epochs": out.history},
                       test_auc=None if test_auc is None else float(test_auc),
                       extra={"best_epoch": out.best_epoch,
                              "best_val_auc": float(out.best_val_auc),
                              "model": str(model_path), "data": str(data_path),
                              "n_train": len(split.train), "n_val": len(split.val),
                              "n_test": len(split.test)})
    _write_record(record, results_root)


@cli.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--method", type=click.Choice(["gradgeo", "gradgam", "random"]),
              default=None, help="Gradient/random baseline instead of the "
              "model's own interpreter.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "scores_out", type=click.Path(), required=True)
@click.option("--results-dir", "results_root", default=None)
def interpret(model_path, data_path, method, seed, scores_out, results_root):
    """Score per-point importance for every sample in a dataset."""
    from .baselines import attribution_scores
    from .train import interpret_dataset

    t0 = time.time()
    out, _ = load_model(model_path)
    samples = load_samples(data_path)
    ds = prepared_for(out, samples)
    sigmas = {}
    if method is None:
        if out.config.method not in ("lri-bernoulli", "lri-gaussian"):
            raise ConfigError(
                f"model method {out.config.method!r} has no built-in interpreter; "
                "pass --method gradgeo|gradgam|random")
        scores, sigmas = interpret_dataset(out.net, ds)
        sigmas = sigmas or {}
        method_name = out.config.method
    else:
        net = getattr(out.net, "clf", out.net)
        scores, _ = attribution_scores(net, ds, method, seed=seed)
        method_name = method
    entries = []
    for s in samples:
        entry = {"id": s.id, "score": scores[s.id], "method": method_name}
        if s.id in sigmas:
            entry["sigma"] = sigmas[s.id]
        entries.append(entry)
    path = write_scores(scores_out, entries)
    click.echo(f"scores ({method_name}) for {len(entries)} samples: {path}")
    record = RunRecord(config=out.config.to_dict(), command="interpret", seed=seed,
                       wall_clock_s=time.time() - t0,
                       extra={"method": method_name, "model": str(model_path),
                              "data": str(data_path), "scores": str(path),
                              "n_samples": len(entries)})
    _write_record(record, results_root)


@cli.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--scores", "scores_path", type=click.Path(exists=True), required=True)
@click.option("--m", "m_raw", default="8", show_default=True,
              help="Comma-separated cutoffs for precision@m.")
@click.option("--pooled", is_flag=True, default=False,
              help="Pool points across samples instead of per-sample averaging.")
@click.option("--results-dir", "results_root", default=None)
def evaluate(data_path, scores_path, m_raw, pooled, results_root):
    """Interpretation ROC AUC and precision@m against ground-truth labels."""
    t0 = time.time()
    samples = load_samples(data_path)
    records = read_scores(scores_path)
    methods = sorted({r["method"] for r in records})
    scores_by_id = {r["id"]: r["score"] for r in records}
    m_list = tuple(_int_list(m_raw))
    auc, prec, n_pos = interpretation_report(samples, scores_by_id, m_list,
                                             pooled=pooled)
    click.echo(f"method: {','.join(methods)}  positives evaluated: {n_pos}")
    click.echo(f"interpretation ROC AUC: {auc:.2f}")
    for m in m_list:
        click.echo(f"precision@{m}: {prec[m]:.2f}")
    record = RunRecord(config={}, command="evaluate", seed=0,
                       wall_clock_s=time.time() - t0,
                       interpretation={"auc": float(auc),
                                       "precision": {str(m): float(v) for m, v in prec.items()},
                                       "n_positives": n_pos, "pooled": pooled,
                                       "methods": methods},
                       extra={"data": str(data_path), "scores": str(scores_path)})
    _write_record(record, results_root)


@cli.command("sweep-b")
@click.option("--b-list", "b_raw", default="2,6,10,14,18", show_default=True)
@click.option("--n", type=int, default=800, show_default=True)
@click.option("--seeds", "seeds_raw", default="0", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--params", "params_file", type=click.Path(exists=True), default=None)
@click.option("--data-seed", type=int, default=4242, show_default=True)
@click.option("--out", "csv_out", type=click.Path(), required=True)
@click.option("--results-dir", "results_root", default=None)
def sweep_b(b_raw, n, seeds_raw, config_path, sets, params_file, data_seed,
            csv_out, results_root):
    """Field-strength sweep: angle accuracy and the eigen-ratio trend.

    Trains the location interpreter (in-plane covariance mode) and a plain
    classifier for the gradient baseline at every field strength.
    """
    t0 = time.time()
    b_values = _float_list(b_raw)
    seeds = _int_list(seeds_raw)
    base = load_config(config_path, _parse_sets(sets))
    lri_config = base.replace(method="lri-gaussian", covariance_2d=True)
    erm_config = base.replace(method="erm")
    params = _load_dataset_params(HelixParams, params_file, ())

    per_seed = []
    for seed in seeds:
        rows, fit = field_sweep(params, b_values, lri_config, erm_config,
                                n_samples=n, data_seed=data_seed, seed=seed,
                                log=click.echo)
        per_seed.append((rows, fit))

    csv_rows = []
    avg_rows = []
    for i, b in enumerate(b_values):
        seed_rows = [rows[i] for rows, _ in per_seed]
        avg = {key: float(np.mean([r[key] for r in seed_rows]))
               for key in ("lri_mean_angle", "lri_std_angle", "lri_eigen_ratio",
                           "lri_interp_auc", "gradgeo_mean_angle",
                           "gradgeo_std_angle")}
        avg.update(B=float(b),
                   n_points_used=int(sum(r["n_points_used"] for r in seed_rows)),
                   n_degenerate=int(sum(r["n_degenerate"] for r in seed_rows)))
        avg_rows.append(avg)
        csv_rows.append({"B": b, "method": "lri-gaussian",
                         "mean_angle_deg": avg["lri_mean_angle"],
                         "std_angle_deg": avg["lri_std_angle"],
                         "mean_eigen_ratio": avg["lri_eigen_ratio"],
                         "interp_auc": avg["lri_interp_auc"],
                         "n_points_used": avg["n_points_used"],
                         "n_degenerate": avg["n_degenerate"]})
        csv_rows.append({"B": b, "method": "gradgeo",
                         "mean_angle_deg": avg["gradgeo_mean_angle"],
                         "std_angle_deg": avg["gradgeo_std_angle"]})
    from .analysis import field_strength_fit
    slope, intercept, corr = field_strength_fit(
        [r["B"] for r in avg_rows], [r["lri_eigen_ratio"] for r in avg_rows])
    path = _write_csv(csv_out, ["B", "method", "mean_angle_deg", "std_angle_deg",
                                "mean_eigen_ratio", "interp_auc",
                                "n_points_used", "n_degenerate"], csv_rows)
    for row in avg_rows:
        click.echo(f"B={row['B']:g}: angle lri={row['lri_mean_angle']:.2f} deg "
                   f"gradgeo={row['gradgeo_mean_angle']:.2f} deg  "
                   f"eigen-ratio={row['lri_eigen_ratio']:.3f}")
    click.echo(f"eigen-ratio vs B fit: slope={slope:.4f} r={corr:.3f}")
    click.echo(f"csv: {path}")
    record = RunRecord(config=lri_config.to_dict(), command="sweep-b",
                       seed=seeds[0], wall_clock_s=time.time() - t0,
                       fine_grained={"rows": avg_rows,
                                     "fit": {"slope": float(slope),
                                             "intercept": float(intercept),
                                             "pearson_r": float(corr)},
                                     "seeds": seeds},
                       extra={"csv": str(path), "n": n})
    _write_record(record, results_root)


@cli.command()
@click.option("--train-tracks", type=int, default=10, show_default=True)
@click.option("--test-tracks", "tracks_raw", default="10,30,50,70", show_default=True)
@click.option("--n-train", type=int, default=2000, show_default=True)
@click.option("--n-test", type=int, default=300, show_default=True)
@click.option("--seeds", "seeds_raw", default="0,1,2", show_default=True)
@click.option("--methods", "methods_raw", default="erm,lri-gaussian", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--params", "params_file", type=click.Path(exists=True), default=None)
@click.option("--data-seed", type=int, default=7777, show_default=True)
@click.option("--out", "csv_out", type=click.Path(), required=True)
@click.option("--results-dir", "results_root", default=None)
def shift(train_tracks, tracks_raw, n_train, n_test, seeds_raw, methods_raw,
          config_path, sets, params_file, data_seed, csv_out, results_root):
    """Distribution-shift robustness: train at one track count, test across
    larger ones."""
    t0 = time.time()
    tracks = _int_list(tracks_raw)
    seeds = _int_list(seeds_raw)
    methods = [m.strip() for m in methods_raw.split(",") if m.strip()]
    base = load_config(config_path, _parse_sets(sets))
    params = _load_dataset_params(HelixParams, params_file, ()).with_tracks(train_tracks)
    samples = generate_helix_dataset(params, n_train, derive_seed(data_seed, "shift-train"))
    split = split_samples(samples, seed=data_seed)

    method_outputs = {}
    for method in methods:
        config = base.replace(method=method)
        outs, _ = multi_seed_runs(config, split, seeds, log=click.echo)
        method_outputs[method] = outs
    rows = shift_table(method_outputs, params, tracks, n_test=n_test,
                       data_seed=data_seed)
    csv_rows = []
    for row in rows:
        for method in methods:
            m, s = row[method]
            csv_rows.append({"tracks": row["tracks"], "method": method,
                             "mean_auc": m, "std_auc": s})
            click.echo(f"tracks={row['tracks']}: {method} AUC {m:.2f} +/- {s:.2f}")
    path = _write_csv(csv_out, ["tracks", "method", "mean_auc", "std_auc"], csv_rows)
    click.echo(f"csv: {path}")
    record = RunRecord(config=base.to_dict(), command="shift", seed=seeds[0],
                       wall_clock_s=time.time() - t0,
                       extra={"rows": csv_rows, "csv": str(path),
                              "train_tracks": train_tracks, "seeds": seeds})
    _write_record(record, results_root)


@cli.command()
@click.option("--dataset", type=click.Choice(["helix", "motif"]), default="helix",
              show_default=True)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--seeds", "seeds_raw", default="0,1,2", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--params", "params_file", type=click.Path(exists=True), default=None)
@click.option("--data-seed", type=int, default=99, show_default=True)
@click.option("--out", "csv_out", type=click.Path(), required=True)
@click.option("--results-dir", "results_root", default=None)
def ablate(dataset, n, seeds_raw, config_path, sets, params_file, data_seed,
           csv_out, results_root):
    """Paired soft-graph ablation for the location interpreter."""
    t0 = time.time()
    seeds = _int_list(seeds_raw)
    config = load_config(config_path, _parse_sets(sets)).replace(method="lri-gaussian")
    if dataset == "helix":
        params = _load_dataset_params(HelixParams, params_file, ())
        samples = generate_helix_dataset(params, n, data_seed)
        scheme = "random"
    else:
        params = _load_dataset_params(MotifParams, params_file, ())
        samples = generate_motif_dataset(params, n, data_seed)
        scheme = "balanced-motif"
    split = split_samples(samples, scheme=scheme, seed=data_seed)
    reports = soft_graph_ablation(config, split, seeds, log=click.echo)
    csv_rows = []
    summary = {}
    for arm, report in reports.items():
        stats = report.summary()
        summary[arm] = _jsonable(stats)
        row = {"soft_graph": arm,
               "interp_auc_mean": stats["interpretation_auc"][0],
               "interp_auc_std": stats["interpretation_auc"][1],
               "cls_auc_mean": stats["classification_auc"][0],
               "cls_auc_std": stats["classification_auc"][1]}
        csv_rows.append(row)
        click.echo(f"soft graph {arm}: interpretation AUC "
                   f"{row['interp_auc_mean']:.2f} +/- {row['interp_auc_std']:.2f}")
    path = _write_csv(csv_out, ["soft_graph", "interp_auc_mean", "interp_auc_std",
                                "cls_auc_mean", "cls_auc_std"], csv_rows)
    click.echo(f"csv: {path}")
    record = RunRecord(config=config.to_dict(), command="ablate", seed=seeds[0],
                       wall_clock_s=time.time() - t0,
                       extra={"summary": summary, "csv": str(path), "seeds": seeds})
    _write_record(record, results_root)


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=GRAD_TOL, show_default=True)
@click.option("--results-dir", "results_root", default=None)
def gradcheck(seed, tol, results_root):
    """Finite-difference verification of every gradient path; exits 2 on failure."""
    t0 = time.time()
    errors = run_suite(seed)
    failed = []
    for name, err in errors.items():
        status = "ok" if err < tol else "FAIL"
        click.echo(f"{name}: max rel error {err:.3e}  [{status}]")
        if err >= tol:
            failed.append(name)
    record = RunRecord(config={}, command="gradcheck", seed=seed,
                       wall_clock_s=time.time() - t0,
                       extra={"errors": {k: float(v) for k, v in errors.items()},
                              "tol": tol, "failed": failed})
    _write_record(record, results_root)
    if failed:
        raise _GradcheckFailure(f"gradient check failed: {', '.join(failed)}")
    click.echo("all gradient checks passed")


@cli.command()
@click.option("--results-dir", "results_root", default=None)
@click.option("--out", "csv_out", type=click.Path(), default=None)
def report(results_root, csv_out):
    """Tabulate every run record found under the results directory."""
    root = results_dir(results_root)
    rows = []
    for path in sorted(root.glob("*.json")):
        try:
            rec = RunRecord.from_json(path.read_text())
        except (ValueError, TypeError):
            continue
        interp = rec.interpretation or {}
        rows.append({"timestamp": rec.timestamp, "command": rec.command,
                     "method": rec.config.get("method", ""), "seed": rec.seed,
                     "test_auc": "" if rec.test_auc is None else f"{rec.test_auc:.2f}",
                     "interp_auc": "" if "auc" not in interp else f"{interp['auc']:.2f}",
                     "wall_clock_s": f"{rec.wall_clock_s:.1f}"})
    if not rows:
        click.echo(f"no run records under {root}")
        return
    header = ["timestamp", "command", "method", "seed", "test_auc",
              "interp_auc", "wall_clock_s"]
    widths = {h: max(len(h), *(len(str(r[h])) for r in rows)) for h in header}
    click.echo("  ".join(h.ljust(widths[h]) for h in header))
    for row in rows:
        click.echo("  ".join(str(row[h]).ljust(widths[h]) for h in header))
    if csv_out:
        path = _write_csv(csv_out, header, rows)
        click.echo(f"csv: {path}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except _GradcheckFailure as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except LRIError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
