"""Command-line driver.

Usage::

    apar [--config FILE] [--seed N] [--out DIR] [--quiet] [--set KEY=VALUE ...] COMMAND

Commands: ingest, traits, train, evaluate, sweep, dsw, recommend.

The config file is flat TOML: one ``key = value`` per line, values typed as
TOML strings, integers, floats, booleans or arrays. Unknown keys are
rejected. Relative paths resolve against the config file's directory.
Precedence: command-line flag > config file > built-in default.

Exit status: 0 on success, 1 on a user error, 2 on a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import evaluation
from .ingest import (DatasetError, build_interaction_matrix, dsw_degree, kfold_indices,
                     parse_reviews, write_split_manifest)
from .model import (FingerprintError, Hyperparams, NumericalError, load_model, recommend_top_n,
                    save_model)
from .personality import load_lexicon, load_weights, user_profiles, write_profiles_csv
from .pipeline import fit_apar

logger = logging.getLogger("apar")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    domain: str | None = None
    lexicon: str | None = None
    weights: str | None = None
    model: str | None = None
    out: str = "apar-out"
    d: int = 100
    alpha1: float = 0.1
    alpha2: float = 0.1
    lam: float = 0.1
    beta: float = 0.5
    tol: float = 1e-5
    max_iters: int = 500
    optimizer: str = "multiplicative"
    neighbor_mode: str = "mean"
    use_knowledge: bool = True
    clip: bool = True
    methods: list = field(default_factory=lambda: list(evaluation.METHODS))
    fractions: list = field(default_factory=lambda: list(evaluation.DEFAULT_FRACTIONS))
    lambdas: list = field(default_factory=lambda: list(evaluation.DEFAULT_LAMBDAS))
    degrees: list = field(default_factory=lambda: list(evaluation.DEFAULT_DEGREES))
    seeds: list = field(default_factory=lambda: list(evaluation.DEFAULT_SEEDS))
    train_fraction: float = 0.9
    sweep_degree: float | None = None
    folds: int = 5
    timing: bool = False

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(d=self.d, alpha1=self.alpha1, alpha2=self.alpha2, lam=self.lam,
                           beta=self.beta, max_iters=self.max_iters, tol=self.tol,
                           seed=self.seeds[0], optimizer=self.optimizer,
                           neighbor_mode=self.neighbor_mode, use_knowledge=self.use_knowledge,
                           clip=self.clip)

    def path(self, name: str) -> Path:
        return Path(self.out) / name

    def model_path(self) -> Path:
        return Path(self.model) if self.model else self.path("model.apar")


# config-file key -> RunConfig attribute ("lambda" is a Python keyword)
_KEY_ALIASES = {"lambda": "lam"}
_PATH_KEYS = {"dataset", "lexicon", "weights", "model", "out"}
_LIST_ITEM_TYPES = {"methods": str, "fractions": float, "lambdas": float, "degrees": float,
                    "seeds": int}


def _coerce(key: str, value, expected):
    if key in _LIST_ITEM_TYPES:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{key} must be a nonempty array")
        kind = _LIST_ITEM_TYPES[key]
        out = []
        for v in value:
            if kind is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, kind) or isinstance(v, bool):
                raise ConfigError(f"{key} entries must be {kind.__name__}, got {v!r}")
            out.append(v)
        return out
    if "float" in expected and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    types = {"str": str, "int": int, "float": float, "bool": bool}
    allowed = [t for name, t in types.items() if name in expected]
    if not any(isinstance(value, t) and (t is bool or not isinstance(value, bool)) for t in allowed):
        raise ConfigError(f"{key} has the wrong type ({type(value).__name__})")
    return value


def apply_settings(cfg: RunConfig, settings: dict, base: Path | None = None) -> RunConfig:
    known = {f.name: str(f.type) for f in fields(RunConfig)}
    for raw_key, value in settings.items():
        key = _KEY_ALIASES.get(raw_key, raw_key)
        if key not in known or raw_key == "lam":
            raise ConfigError(f"unknown config key {raw_key!r}")
        value = _coerce(raw_key, value, known[key])
        if key in _PATH_KEYS and base is not None and not os.path.isabs(value):
            value = str(base / value)
        setattr(cfg, key, value)
    return cfg


def load_config(path: str | os.PathLike | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not allowed ({', '.join(nested)})")
    return apply_settings(cfg, data, Path(path).resolve().parent)


def _parse_override(text: str) -> dict:
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        return tomllib.loads(f"{key.strip()} = {value.strip()}")
    except tomllib.TOMLDecodeError:
        # bare words are taken as strings
        return {key.strip(): value.strip()}


def _require(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"{key} is not set")
    if not os.path.exists(value):
        raise FileNotFoundError(f"{key} not found: {value}")
    return value


def _load_dataset(cfg: RunConfig):
    path = _require(cfg, "dataset")
    return parse_reviews(path, domain=cfg.domain or "default")


def _resources(cfg: RunConfig):
    lex = load_lexicon(_require(cfg, "lexicon")) if cfg.lexicon else load_lexicon()
    wt = load_weights(_require(cfg, "weights")) if cfg.weights else load_weights()
    return lex, wt


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(cfg: RunConfig) -> dict:
    ds = _load_dataset(cfg)
    _outdir(cfg)
    summary = {
        "users": ds.n_users,
        "items": ds.n_items,
        "ratings": len(ds.records),
        "density": len(ds.records) / (ds.n_users * ds.n_items),
        "dsw_degree": dsw_degree(ds),
    }
    if ds.parse_stats is not None:
        summary["rejected"] = ds.parse_stats.rejected
        summary["duplicates"] = ds.parse_stats.duplicates
    ds.dump(cfg.path("dataset.jsonl"))
    if len(ds.records) >= cfg.folds:
        write_split_manifest(kfold_indices(len(ds.records), cfg.folds, cfg.seeds[0]),
                             cfg.path(f"folds_k{cfg.folds}.txt"))
    print(f"users     {summary['users']}")
    print(f"items     {summary['items']}")
    print(f"ratings   {summary['ratings']}")
    print(f"density   {summary['density']:.4f}")
    print(f"dsw       {summary['dsw_degree']:.4f}")
    if "rejected" in summary:
        print(f"rejected  {summary['rejected']}")
        print(f"dupes     {summary['duplicates']}")
    return summary


def cmd_traits(cfg: RunConfig):
    ds = _load_dataset(cfg)
    lex, wt = _resources(cfg)
    profiles = user_profiles(ds, lex, wt)
    _outdir(cfg)
    write_profiles_csv(profiles, cfg.path("profiles.csv"))
    untyped = sum(p.untyped for p in profiles.values())
    print(f"profiles  {len(profiles)}")
    print(f"untyped   {untyped}")
    return profiles


def cmd_train(cfg: RunConfig):
    ds = _load_dataset(cfg)
    lex, wt = _resources(cfg)
    fitted = fit_apar(ds, cfg.hyperparams(), lex, wt, cfg.domain)
    model = fitted.model
    _outdir(cfg)
    save_model(model, cfg.model_path(), ds.fingerprint)
    with open(cfg.path("objective_trace.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for it, f in enumerate(model.history):
            w.writerow([it, repr(float(f))])
    fitted.knowledge.to_csv(cfg.path("knowledge.csv"), ds.user_ids)
    for it, f in enumerate(model.history):
        logger.debug("iteration %d objective %.10g", it, f)
    print(f"iterations {model.n_iter}")
    print(f"objective  {model.objective:.6f}")
    print(f"converged  {model.converged}")
    print(f"model      {cfg.model_path()}")
    return model


def _write_report(cfg: RunConfig, report, stem: str):
    _outdir(cfg)
    report.to_csv(cfg.path(f"{stem}.csv"), timing=cfg.timing)
    table = report.render_table()
    cfg.path(f"{stem}.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    failed = [c for c in report.cells if not c.ok]
    if failed:
        print(f"{len(failed)} cell(s) failed; see {stem}.csv")
    return report


def cmd_evaluate(cfg: RunConfig):
    ds = _load_dataset(cfg)
    lex, wt = _resources(cfg)
    report = evaluation.run_benchmark(ds, cfg.methods, cfg.fractions, cfg.hyperparams(),
                                      cfg.seeds, lex, wt, cfg.domain)
    return _write_report(cfg, report, "benchmark")


def cmd_sweep(cfg: RunConfig):
    ds = _load_dataset(cfg)
    lex, wt = _resources(cfg)
    report = evaluation.lambda_sweep(ds, cfg.lambdas, cfg.hyperparams(), cfg.seeds,
                                     (cfg.train_fraction,), cfg.sweep_degree, lex, wt, cfg.domain)
    return _write_report(cfg, report, "lambda_sweep")


def cmd_dsw(cfg: RunConfig):
    ds = _load_dataset(cfg)
    lex, wt = _resources(cfg)
    report = evaluation.dsw_benchmark(ds, cfg.degrees, cfg.methods, cfg.hyperparams(),
                                      cfg.seeds, cfg.train_fraction, lex, wt, cfg.domain)
    return _write_report(cfg, report, "dsw")


def cmd_recommend(cfg: RunConfig, user_id: str, n: int = 10, include_rated: bool = False):
    ds = _load_dataset(cfg)
    path = cfg.model_path()
    if not path.exists():
        raise FileNotFoundError(f"model not found: {path}")
    model = load_model(path, fingerprint=ds.fingerprint)
    if user_id not in ds.user_index:
        raise KeyError(f"unknown user {user_id!r}")
    recs = recommend_top_n(model, ds.user_index[user_id], n, exclude_rated=not include_rated,
                           interactions=build_interaction_matrix(ds))
    for j, score in recs:
        print(f"{ds.item_ids[j]}\t{score:.6f}")
    return [(ds.item_ids[j], s) for j, s in recs]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apar", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--seed", type=int, help="run a single seed (overrides seeds)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    p.add_argument("--dataset", help="review JSON-lines file")
    p.add_argument("--lexicon", help="lexicon file")
    p.add_argument("--weights", help="trait weight CSV")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (TOML value syntax)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="parse the corpus, print a summary, write a canonical dump")
    sub.add_parser("traits", help="write per-user personality profiles")
    sub.add_parser("train", help="train on the whole corpus and save the model")
    sub.add_parser("evaluate", help="benchmark methods over training fractions")
    sub.add_parser("sweep", help="sweep the personality-regularization weight")
    sub.add_parser("dsw", help="benchmark under no-common-feedback sparsity")
    rec = sub.add_parser("recommend", help="top-N items for one user from a saved model")
    rec.add_argument("user_id")
    rec.add_argument("-n", type=int, default=10)
    rec.add_argument("--include-rated", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for text in args.set:
        apply_settings(cfg, _parse_override(text))
    for key in ("dataset", "lexicon", "weights", "out"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cmd = args.command
        if cmd == "recommend":
            cmd_recommend(cfg, args.user_id, args.n, args.include_rated)
        else:
            {"ingest": cmd_ingest, "traits": cmd_traits, "train": cmd_train,
             "evaluate": cmd_evaluate, "sweep": cmd_sweep, "dsw": cmd_dsw}[cmd](cfg)
    except (NumericalError, FloatingPointError) as exc:
        print(f"apar: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, FingerprintError, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"apar: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
