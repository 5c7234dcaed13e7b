"""``mono-ctr`` command-line interface.

Usage: ``mono-ctr <command> --config <path> [--seed N] [--out DIR]``

Every command reads one TOML config file; relative paths in it resolve
against the config file's directory. Exit status is 0 on success, 1 on a
runtime failure and 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .backbones import ModelSpec
from .dataio import (
    PRESETS,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_checkpoint,
    load_csv,
    save_checkpoint,
    write_csv,
)
from .errors import ConfigError, MonoCtrError
from .experiment import DEFAULT_SEEDS, ablation_runs, alpha_runs, run_experiment, sweep_grid, write_sweep_csv
from .features import FeatureSchema, FeatureSpace, fit_features, load_schema, save_schema
from .importance import ImportanceProfile, ShapleyConfig, compute_importance, sample_disturb_fields
from .metrics import MetricsReport, evaluate, format_table
from .numcore import rng_from_seed
from .synthesizer import eligible_fields, synthesize_batch, write_triples_csv
from .trainer import TrainConfig, train

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("mono_ctr")

COMMANDS = ("fit-features", "train", "importance", "evaluate", "synth-data", "synthesize", "ablation", "sweep-alpha")

_SECTIONS = {
    "paths": {"schema", "preset", "data", "test_data", "features", "importance", "checkpoint", "base_checkpoint", "output"},
    "model": {"kind", "embed_dim", "hidden", "cross_depth"},
    "train": None,  # validated by TrainConfig
    "metrics": {"top_k"},
    "shapley": {"n_permutations", "n_probe", "seed"},
    "synthetic": None,  # validated by SyntheticSpec
    "split": {"test_fraction", "seed", "column", "cutoff"},
    "experiment": {"seeds", "alphas"},
    "synthesize": {"field"},
}


@dataclass
class RunConfig:
    command: str
    root: Path
    raw: dict[str, Any]
    paths: dict[str, str] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    top_k: int = 7
    out: Path = Path(".")

    def path(self, key: str, default: str | None = None, required: bool = True) -> Path | None:
        value = self.paths.get(key, default)
        if value is None:
            if required:
                raise ConfigError(f"command {self.command!r} needs paths.{key} in the config")
            return None
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.raw.get(name, {}))


def load_config(command: str, path: str | Path, seed: int | None, out: str | None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    for name, allowed in _SECTIONS.items():
        if allowed is not None and name in raw:
            bad = set(raw[name]) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
    root = path.parent.resolve()
    train_cfg = dict(raw.get("train", {}))
    if seed is not None:
        train_cfg["seed"] = seed
    model = raw.get("model", {})
    cfg = RunConfig(
        command=command,
        root=root,
        raw=raw,
        paths=dict(raw.get("paths", {})),
        train=TrainConfig.from_dict(train_cfg),
        model=ModelSpec(
            model.get("kind", "dnn"),
            int(model.get("embed_dim", 32)),
            tuple(model.get("hidden", (512, 255, 127, 127))),
            int(model.get("cross_depth", 3)),
        ),
        top_k=int(raw.get("metrics", {}).get("top_k", 7)),
    )
    cfg.out = Path(out) if out else cfg.path("output", ".")
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


# --------------------------------------------------------------------------- helpers


def _schema(cfg: RunConfig) -> FeatureSchema:
    if "preset" in cfg.paths:
        name = cfg.paths["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name]()
    return load_schema(cfg.path("schema"))


def _datasets(cfg: RunConfig, schema: FeatureSchema) -> tuple[Dataset, Dataset]:
    """Train/test data: an explicit test file, a column cutoff split, or a random split."""
    data = load_csv(cfg.path("data"), schema)
    test_path = cfg.path("test_data", required=False)
    if test_path is not None:
        return data, load_csv(test_path, schema)
    split = cfg.section("split")
    if "column" in split:
        return data.split_by(split["column"], str(split["cutoff"]))
    return data.split(float(split.get("test_fraction", 0.2)), int(split.get("seed", 0)))


def _features(cfg: RunConfig, schema: FeatureSchema, train_data: Dataset) -> FeatureSpace:
    path = cfg.path("features", required=False)
    if path is not None and path.exists():
        return FeatureSpace.from_dict(json.loads(path.read_text()))
    return fit_features(schema, train_data)


def _shapley(cfg: RunConfig) -> ShapleyConfig:
    s = cfg.section("shapley")
    return ShapleyConfig(int(s.get("n_permutations", 64)), int(s.get("n_probe", 256)), int(s.get("seed", cfg.train.seed)))


def _dump(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _seeds(cfg: RunConfig, seed: int | None) -> list[int]:
    if seed is not None:
        return [seed]
    return [int(s) for s in cfg.section("experiment").get("seeds", DEFAULT_SEEDS)]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MONO_CTR_THREADS", "1")))
    except ValueError:
        raise ConfigError("MONO_CTR_THREADS must be an integer") from None


# --------------------------------------------------------------------------- commands


def cmd_synth_data(cfg: RunConfig, seed: int | None) -> int:
    s = cfg.section("synthetic")
    if seed is not None:
        s["seed"] = seed
    spec = SyntheticSpec.from_dict(s)
    data, truth = generate_synthetic(spec)
    split = cfg.section("split")
    train_data, test_data = data.split(float(split.get("test_fraction", 0.2)), int(split.get("seed", 0)))
    write_csv(train_data, cfg.out / "train.csv")
    write_csv(test_data, cfg.out / "test.csv")
    save_schema(data.schema, cfg.out / "schema.toml")
    _dump(
        cfg.out / "truth.json",
        {
            "spec": spec.to_dict(),
            "knots": [k.tolist() for k in truth.knots],
            "values": [v.tolist() for v in truth.values],
        },
    )
    print(f"wrote {len(train_data)} train / {len(test_data)} test rows to {cfg.out}")
    return 0


def cmd_fit_features(cfg: RunConfig, seed: int | None) -> int:
    schema = _schema(cfg)
    train_data, _ = _datasets(cfg, schema)
    space = fit_features(schema, train_data)
    path = cfg.path("features", str(cfg.out / "features.json"))
    _dump(path, space.to_dict())
    print(f"fitted {len(schema.categorical)} categorical / {len(schema.numerical)} numerical fields -> {path}")
    return 0


def cmd_train(cfg: RunConfig, seed: int | None) -> int:
    schema = _schema(cfg)
    train_data, test_data = _datasets(cfg, schema)
    space = _features(cfg, schema, train_data)
    importance = None
    tc = cfg.train
    needs_importance = tc.ccss_enabled and not tc.uniform_disturb and (tc.uses_factual or tc.uses_counterfactual)
    if needs_importance:
        importance = ImportanceProfile.load(cfg.path("importance"))
    model, report = train(tc, space.encode(train_data), space, cfg.model, importance)
    report.metrics = evaluate(model, space.encode(test_data), _ranked_fields(cfg, model.space, importance)).to_dict()
    ckpt = cfg.path("checkpoint", str(cfg.out / "model.json"))
    save_checkpoint(ckpt, model, _train_echo(tc), tc.seed)
    _dump(cfg.out / "train_report.json", report.to_dict())
    print(f"saved checkpoint {ckpt}; test AUC {report.metrics['auc']:.4f}")
    return 0


def _train_echo(tc: TrainConfig) -> dict[str, Any]:
    return asdict(tc)


def _ranked_fields(cfg: RunConfig, space: FeatureSpace, importance: ImportanceProfile | None) -> list[int]:
    if importance is None:
        path = cfg.path("importance", required=False)
        if path is not None and path.exists():
            importance = ImportanceProfile.load(path)
    if importance is None:
        return eligible_fields(space)[: cfg.top_k]
    return importance.ranking()[: cfg.top_k]


def cmd_importance(cfg: RunConfig, seed: int | None) -> int:
    ckpt = load_checkpoint(cfg.path("checkpoint"))
    schema = ckpt.model.space.schema
    train_data, _ = _datasets(cfg, schema)
    profile = compute_importance(ckpt.model, ckpt.model.space.encode(train_data), _shapley(cfg))
    path = cfg.path("importance", str(cfg.out / "importance.json"))
    profile.save(path)
    for i in profile.ranking():
        print(f"{profile.names[i]:24s} q={profile.q[i]:.5f} p={profile.p[i]:.4f}")
    return 0


def cmd_evaluate(cfg: RunConfig, seed: int | None) -> int:
    ckpt = load_checkpoint(cfg.path("checkpoint"))
    model = ckpt.model
    _, test_data = _datasets(cfg, model.space.schema)
    enc = model.space.encode(test_data)
    fields = _ranked_fields(cfg, model.space, None)
    report = evaluate(model, enc, fields)
    rows = [(model.spec.kind.upper(), report)]
    base_path = cfg.path("base_checkpoint", required=False)
    if base_path is not None:
        base = load_checkpoint(base_path).model
        base_report = evaluate(base, enc, fields)
        report = report.with_base(str(base_path.name), base_report)
        rows = [(base.spec.kind.upper(), base_report), (model.spec.kind.upper() + " (evaluated)", report)]
    _dump(cfg.out / "metrics.json", report.to_dict())
    print(format_table(rows, k=len(fields)))
    return 0


def cmd_synthesize(cfg: RunConfig, seed: int | None) -> int:
    schema = _schema(cfg) if ("schema" in cfg.paths or "preset" in cfg.paths) else None
    ckpt_path = cfg.path("checkpoint", required=False)
    if schema is None:
        if ckpt_path is None:
            raise ConfigError("synthesize needs paths.schema (or a checkpoint to take the features from)")
        space = load_checkpoint(ckpt_path).model.space
        schema = space.schema
        train_data, _ = _datasets(cfg, schema)
    else:
        train_data, _ = _datasets(cfg, schema)
        space = _features(cfg, schema, train_data)
    enc = space.encode(train_data)
    name = cfg.section("synthesize").get("field")
    if name is not None:
        fields = np.full(len(enc), schema.numerical_index(name), dtype=np.int64)
    else:
        ok = eligible_fields(space)
        p = np.zeros(space.n_numerical)
        p[ok] = 1.0 / len(ok)
        path = cfg.path("importance", required=False)
        if path is not None and path.exists():
            p = ImportanceProfile.load(path).p
        fields = sample_disturb_fields(p, rng_from_seed(cfg.train.seed), len(enc))
    triples = synthesize_batch(enc, fields, space)
    n = write_triples_csv(cfg.out / "triples.csv", triples, space)
    print(f"wrote {n} triples ({triples.n_pairs} pairs) to {cfg.out / 'triples.csv'}")
    return 0


def _experiment_inputs(cfg: RunConfig):
    schema = _schema(cfg)
    train_data, test_data = _datasets(cfg, schema)
    space = _features(cfg, schema, train_data)
    return space, space.encode(train_data), space.encode(test_data)


def cmd_ablation(cfg: RunConfig, seed: int | None) -> int:
    space, tr, te = _experiment_inputs(cfg)
    runs = ablation_runs(cfg.model.kind)
    seeds = _seeds(cfg, seed)
    result = run_experiment(tr, te, space, cfg.model, cfg.train, runs, seeds, _shapley(cfg), cfg.top_k, workers=_workers())
    k = cfg.top_k
    out = {
        "seeds": seeds,
        "top_k": k,
        "rows": {
            n: {"auc": result.mean_auc(n), "gauc": result.mean_gauc(n), "mono_rate": result.mean_mono(n, k)}
            for n in result.names
        },
    }
    _dump(cfg.out / "ablation.json", out)
    width = max(len(n) for n in runs)
    print(f"{'Models':{width}s}  AUC     GAUC    Mono_rate(top-{k})")
    for n in runs:
        r = out["rows"][n]
        g = "-" if r["gauc"] is None else f"{r['gauc']:.4f}"
        print(f"{n:{width}s}  {r['auc']:.4f}  {g:6s}  {r['mono_rate'] * 100:.1f}%")
    return 0


def cmd_sweep_alpha(cfg: RunConfig, seed: int | None) -> int:
    space, tr, te = _experiment_inputs(cfg)
    alphas = sweep_grid(cfg.section("experiment").get("alphas", (0.0, 0.25, 1.0, 4.0)))
    seeds = _seeds(cfg, seed)
    result = run_experiment(
        tr, te, space, cfg.model, cfg.train, alpha_runs(alphas), seeds, _shapley(cfg), cfg.top_k, workers=_workers()
    )
    path = cfg.out / "alpha_sweep.csv"
    write_sweep_csv(path, result, alphas, cfg.top_k)
    print(path.read_text(), end="")
    return 0


HANDLERS = {
    "synth-data": cmd_synth_data,
    "fit-features": cmd_fit_features,
    "train": cmd_train,
    "importance": cmd_importance,
    "evaluate": cmd_evaluate,
    "synthesize": cmd_synthesize,
    "ablation": cmd_ablation,
    "sweep-alpha": cmd_sweep_alpha,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mono-ctr", description="Monotonicity-aware CTR training toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out", default=None, help="output directory (overrides paths.output)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed, args.out)
        return HANDLERS[args.command](cfg, args.seed)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"mono-ctr: error: {exc}", file=sys.stderr)
        return 2
    except (MonoCtrError, OSError, KeyError) as exc:
        print(f"mono-ctr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
