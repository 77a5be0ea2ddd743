"""Command-line front end: ``stsub train | eval | experiment | rerun``.

Runs are driven by a flat ``key = value`` config file whose keys mirror
``ExperimentConfig``; ``--set key=value`` and explicit flags override it. Every
command writes a ``manifest.json`` from which ``stsub rerun`` reproduces the
numeric outputs.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    ExperimentConfig,
    FeatureSet,
    generate_synthetic_crossview,
    load_feature_set,
    load_projection,
    parse_ratio,
    save_feature_set,
    save_projection,
    split_by_ratio,
    write_binary,
)
from .eigensolve import ConditioningError
from .evaluation import METHODS, evaluate, fit_method, run_experiment, summary_table
from .kernels import DegenerateKernelError

log = logging.getLogger("stsub")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CACHE_ENV = "STSUB_CACHE_DIR"
SYNTHETIC_KEYS = {
    "persons": int,
    "images_per_view": int,
    "latent_dim": int,
    "noise_sigma": float,
    "dim": int,
    "seed": int,
}
SYNTHETIC_DEFAULTS = {"persons": 100, "images_per_view": 1, "latent_dim": 8, "noise_sigma": 0.5, "dim": 128, "seed": 0}


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


# ---------------------------------------------------------------------------
# config parsing


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


_CONVERTERS = {
    "eta": float,
    "k_neighbors": int,
    "max_iters": int,
    "theta": float,
    "c_grid": lambda s: tuple(float(c) for c in s.replace(" ", "").split(",") if c),
    "kernel": str,
    "ratio": lambda s: parse_ratio(s.strip()),
    "trials": int,
    "rng_seed": int,
    "stop_tolerance": float,
    "method": str,
    "subspace_dim": _parse_optional_int,
    "rank_tol": float,
    "center": _parse_bool,
    "ridge": float,
    "rerank_alpha": float,
    "rerank_k": int,
    "multi_shot": _parse_bool,
    "split_mode": str,
    "track_iterations": _parse_bool,
}


def config_keys() -> tuple:
    return tuple(f.name for f in fields(ExperimentConfig))


def parse_pairs(pairs, where: str = "config") -> dict:
    """Typed ``ExperimentConfig`` values from ``(lineno, key, raw)`` triples."""
    known = set(config_keys())
    out = {}
    for lineno, key, raw in pairs:
        loc = f"{where} line {lineno}" if lineno else where
        if key not in known:
            raise ConfigError(f"{loc}: unknown config key {key!r}")
        try:
            out[key] = _CONVERTERS[key](raw.strip())
        except (ValueError, DataError) as exc:
            raise ConfigError(f"{loc}: bad value for {key}: {exc}") from exc
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((lineno, key.strip(), value))
    return parse_pairs(pairs, str(path))


def _split_assignments(items, what: str):
    pairs = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"{what}: expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((0, key.strip(), value))
    return pairs


def build_config(args, extra: dict | None = None) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    values.update(extra or {})
    values.update(parse_pairs(_split_assignments(getattr(args, "set", None), "--set"), "--set"))
    for flag, key in (("ratio", "ratio"), ("trials", "trials"), ("seed", "rng_seed")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = parse_pairs([(0, key, str(v))], f"--{flag}")[key]
    try:
        return ExperimentConfig(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    pairs = [(0, k, ",".join(map(str, v)) if isinstance(v, list) else str(v)) for k, v in d.items()]
    return ExperimentConfig(**parse_pairs(pairs, "manifest"))


# ---------------------------------------------------------------------------
# datasets and manifests


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def feature_set_digest(fs: FeatureSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(fs.features, dtype="<f8").tobytes())
    h.update(fs.person_id.astype("<i8").tobytes())
    h.update(fs.view_id.astype("<i8").tobytes())
    h.update("\n".join(fs.split_tag).encode())
    return h.hexdigest()


def parse_synthetic(items) -> tuple[dict, dict]:
    """Split ``--synthetic`` assignments into generator parameters and config values."""
    gen = dict(SYNTHETIC_DEFAULTS)
    cfg_pairs = []
    for _, key, raw in _split_assignments(items, "--synthetic"):
        if key in SYNTHETIC_KEYS:
            try:
                gen[key] = SYNTHETIC_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"--synthetic: bad value for {key}: {exc}") from exc
        else:
            cfg_pairs.append((0, key, raw))
    return gen, parse_pairs(cfg_pairs, "--synthetic")


def synthetic_dataset(gen: dict) -> FeatureSet:
    cache = os.environ.get(CACHE_ENV)
    key = _sha256_bytes(json.dumps(gen, sort_keys=True).encode())[:16]
    if cache:
        path = Path(cache) / f"synthetic-{key}.stsf"
        if path.exists():
            return load_feature_set(path)
    fs = generate_synthetic_crossview(
        gen["persons"], gen["images_per_view"], gen["latent_dim"], gen["noise_sigma"], seed=gen["seed"], dim=gen["dim"]
    )
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
        write_binary(fs, Path(cache) / f"synthetic-{key}.stsf")
    return fs


def load_dataset(source: dict) -> tuple[FeatureSet, str]:
    if source["kind"] == "synthetic":
        fs = synthetic_dataset(source["params"])
        return fs, feature_set_digest(fs)
    path = Path(source["path"])
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    fs = load_feature_set(path)
    return fs, _sha256_bytes(path.read_bytes())


def write_manifest(out: Path, command: str, config: ExperimentConfig, dataset: dict, digest: str, seeds, artifacts, options):
    manifest = {
        "tool": "stsub",
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        "dataset": dict(dataset, sha256=digest),
        "seeds": [list(s) for s in seeds],
        "options": options,
        "artifacts": sorted(artifacts),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _attach_log(out: Path, name: str):
    handler = logging.FileHandler(out / name, mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger = logging.getLogger("stsub")
    handler.previous_level = logger.level
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    return handler


def _detach_log(handler):
    logger = logging.getLogger("stsub")
    logger.removeHandler(handler)
    logger.setLevel(handler.previous_level)
    handler.close()


# ---------------------------------------------------------------------------
# commands


def _history_csv(state) -> str:
    buf = io.StringIO()
    buf.write("iter,edges_changed,objective\n")
    for rec in [] if state is None else state.history:
        buf.write(f"{rec.t},{rec.edges_changed},{rec.objective!r}\n")
    return buf.getvalue()


def _training_columns(fs: FeatureSet, config: ExperimentConfig):
    lab = np.flatnonzero((fs.split_tag == "labeled") & (fs.person_id >= 0))
    unl = np.flatnonzero(fs.split_tag == "unlabeled")
    if lab.size == 0:
        raise DataError("feature file has no labeled samples with person ids")
    if unl.size == 0 and config.ratio < 1:
        part = split_by_ratio(fs, config.ratio, config.rng_seed, indices=lab)
        lab, unl = part.labeled_indices, part.unlabeled_indices
    return lab, unl


def run_train(config: ExperimentConfig, dataset: dict, method: str, out: Path) -> dict:
    fs, digest = load_dataset(dataset)
    lab, unl = _training_columns(fs, config)
    handler = _attach_log(out, "train.log")
    try:
        proj, state = fit_method(
            method, fs.features[:, lab], fs.person_id[lab], fs.features[:, unl], fs.view_id[unl], config
        )
    finally:
        _detach_log(handler)
    save_projection(proj, out / "projection.stsp")
    (out / "history.csv").write_text(_history_csv(state))
    arts = ["projection.stsp", "history.csv", "train.log"]
    return write_manifest(out, "train", config, dataset, digest, [(config.rng_seed, 0)], arts, {"method": method})


def _probe_gallery(fs: FeatureSet):
    tags = fs.split_tag
    if np.any(tags == "probe") and np.any(tags == "gallery"):
        return fs.subset(fs.where("probe")), fs.subset(fs.where("gallery"))
    views = np.unique(fs.view_id)
    if views.size < 2:
        raise DataError("evaluation needs probe/gallery tags or at least two views")
    first = fs.view_id == views[0]
    return fs.subset(np.flatnonzero(first)), fs.subset(np.flatnonzero(~first))


def run_eval(config: ExperimentConfig, dataset: dict, projection_path: Path, rerank: bool, out: Path) -> dict:
    fs, digest = load_dataset(dataset)
    if not projection_path.exists():
        raise FileNotFoundError(f"projection file not found: {projection_path}")
    proj = load_projection(projection_path)
    probes, gallery = _probe_gallery(fs)
    mode = "multi_shot" if config.multi_shot else "single_shot"
    base, reranked = evaluate(proj, probes, gallery, mode, rerank, config.rerank_alpha, config.rerank_k)
    curves = [("baseline", base)] + ([("rerank", reranked)] if rerank else [])
    buf = io.StringIO()
    buf.write("rank," + ",".join(name for name, _ in curves) + "\n")
    for r in range(len(base.rates)):
        buf.write(f"{r + 1}," + ",".join(repr(float(c.rates[r])) for _, c in curves) + "\n")
    (out / "cmc.csv").write_text(buf.getvalue())
    header = f"probes={base.n_probes} excluded={base.n_excluded}"
    (out / "summary.txt").write_text(summary_table(curves, header))
    options = {"projection": str(projection_path), "rerank": rerank}
    return write_manifest(out, "eval", config, dataset, digest, [], ["cmc.csv", "summary.txt"], options)


def run_experiments(config: ExperimentConfig, dataset: dict, methods, jobs: int, out: Path) -> dict:
    fs, digest = load_dataset(dataset)
    reports, arts = [], ["summary.txt"]
    handler = _attach_log(out, "train.log")
    try:
        for method in methods:
            rep = run_experiment(fs, config, method, jobs=jobs)
            reports.append(rep)
            for kind, text in (("cmc", rep.cmc_csv()), ("history", rep.history_csv()), ("timing", rep.timing_csv())):
                name = f"{kind}_{method}.csv"
                (out / name).write_text(text)
                arts.append(name)
    finally:
        _detach_log(handler)
    rows = []
    for rep in reports:
        if rep.mean_baseline_cmc is not None:
            rows.append((rep.method + " (no rerank)", rep.mean_baseline_cmc))
        rows.append((rep.method, rep.mean_cmc))
    failed = sum(len(r.trials) - len(r.completed) for r in reports)
    header = f"ratio={config.ratio} trials={config.trials} failed_trials={failed}"
    (out / "summary.txt").write_text(summary_table(rows, header))
    seeds = [t.seed for t in reports[0].trials]
    arts.append("train.log")
    options = {"methods": list(methods), "jobs": jobs}
    return write_manifest(out, "experiment", config, dataset, digest, seeds, arts, options)


def _dataset_from_args(args) -> tuple[dict, dict]:
    synthetic = getattr(args, "synthetic", None)
    if synthetic is not None:
        gen, cfg = parse_synthetic(synthetic)
        return {"kind": "synthetic", "params": gen}, cfg
    if not args.features:
        raise ConfigError("give --features FILE or --synthetic key=value ...")
    return {"kind": "file", "path": str(Path(args.features).resolve())}, {}


def _methods(text: str):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def cmd_train(args) -> dict:
    dataset, extra = _dataset_from_args(args)
    config = build_config(args, extra)
    method = _methods(args.method or config.method)[0]
    return run_train(config, dataset, method, _out_dir(args.out))


def cmd_eval(args) -> dict:
    dataset, extra = _dataset_from_args(args)
    config = build_config(args, extra)
    return run_eval(config, dataset, Path(args.projection).resolve(), args.rerank, _out_dir(args.out))


def cmd_experiment(args) -> dict:
    dataset, extra = _dataset_from_args(args)
    config = build_config(args, extra)
    methods = _methods(args.method) if args.method else ["mkfsl", "mkssl"]
    if args.rerank and "mkssl-mrank" not in methods:
        methods.append("mkssl-mrank")
    return run_experiments(config, dataset, methods, args.jobs, _out_dir(args.out))


def cmd_rerun(args) -> dict:
    path = Path(args.manifest)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
        command, dataset, options = manifest["command"], manifest["dataset"], manifest["options"]
        config = config_from_dict(manifest["config"])
    except (KeyError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"unreadable manifest {path}: {exc}") from exc
    expected = dataset.pop("sha256", None)
    _, digest = load_dataset(dataset)
    if expected is not None and digest != expected:
        raise DataError(f"dataset hash {digest} differs from the manifest's {expected}")
    out = _out_dir(args.out)
    if command == "train":
        return run_train(config, dataset, options["method"], out)
    if command == "eval":
        return run_eval(config, dataset, Path(options["projection"]), options["rerank"], out)
    if command == "experiment":
        return run_experiments(config, dataset, options["methods"], args.jobs or options.get("jobs", 1), out)
    raise ConfigError(f"manifest has unknown command {command!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stsub", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"stsub {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, synthetic=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--features", help="feature file (.csv, or .bin/.stsf binary)")
        if synthetic:
            p.add_argument("--synthetic", nargs="*", metavar="KEY=VALUE", help="generate synthetic data instead")
        p.add_argument("--ratio", help="labeled fraction, e.g. 1/3")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--out", default="stsub-out", help="output directory")

    p = sub.add_parser("train", help="fit one projection")
    common(p)
    p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="CMC of a saved projection on probe/gallery data")
    common(p)
    p.add_argument("--projection", required=True)
    p.add_argument("--rerank", action="store_true", help="also report manifold re-ranking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="repeated random-split benchmark")
    common(p)
    p.add_argument("--method", help="comma-separated methods (default mkfsl,mkssl)")
    p.add_argument("--trials", type=int, help="number of random splits")
    p.add_argument("--rerank", action="store_true", help="add mkssl-mrank to the methods")
    p.add_argument("--jobs", type=int, default=1, help="parallel trials")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("rerun", help="reproduce a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="stsub-rerun")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        manifest = args.func(args)
    except ConfigError as exc:
        print(f"stsub: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConditioningError, DegenerateKernelError, np.linalg.LinAlgError, NumericalError) as exc:
        print(f"stsub: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"stsub: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        # every trial failed
        print(f"stsub: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"stsub: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    summary = Path(args.out) / "summary.txt"
    if manifest["command"] != "train" and summary.exists():
        print(summary.read_text(), end="")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
