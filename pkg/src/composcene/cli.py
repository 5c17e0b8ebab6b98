"""Operator surface: gen, train, infer, eval, sweep, describe.

Runs are driven by an INI config (sections below); command-line flags
--seed/--out/--jobs override the file.  Every command echoes the resolved
configuration next to its outputs, and all artifacts are reproducible from
that echo.

Exit codes: 0 success, 2 configuration problem, 3 I/O or file-format
problem, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import infer as infer_mod
from .concepts import coordinate_concept, onehot_concept
from .errors import (
    ConfigError,
    DataFormatError,
    NumericError,
    ParameterError,
)
from .evaluate import multi_label_accuracy, perception_metrics
from .infer import InferenceConfig, InferenceReport
from .network import NetworkModel, load_params
from .ppm import overlay_image, write_ppm
from .schedule import make_linear_schedule
from .train import TrainConfig, train_loop, write_loss_csv
from .world import TASK_GLOBAL, TASK_LOCAL, load_dataset, sample_dataset, save_dataset
from .world import describe as describe_dataset_header
from .network import Architecture  # noqa: F401  (re-exported for config docs)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_SCHEMA = {
    "run": {"seed", "out"},
    "world": {"task", "count", "k_min", "k_max", "palette", "height", "width",
              "channels", "min_sep", "margin", "radius", "jitter", "n_attrs"},
    "schedule": {"steps", "beta_start", "beta_end"},
    "arch": {"hidden", "time_embed_dim", "concept_encoding", "rbf_grid"},
    "train": {"dataset", "learning_rate", "batch_size", "step_budget",
              "optimizer", "gradient_clip_norm", "checkpoint_every"},
    "infer": {"dataset", "checkpoint", "algorithm", "restarts", "sgd_steps",
              "sample_count", "concept_lr", "k", "k_min", "k_max",
              "prune_cadence", "prune_fraction", "t_min", "t_max",
              "scene_limit", "overlay", "pick_count", "vocabulary", "nested",
              "max_step"},
    "eval": {"dataset", "reports", "threshold"},
    "sweep": {"restarts", "seeds", "jobs"},
}


class RunConfig:
    """Parsed INI config with strict keys and typed accessors."""

    def __init__(self, parser: configparser.ConfigParser, path: str):
        self.path = path
        self._p = parser
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key in parser[section]:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    def has(self, section: str) -> bool:
        return self._p.has_section(section)

    def _raw(self, section, key):
        if not self._p.has_section(section) or key not in self._p[section]:
            return None
        value = self._p[section][key].strip()
        return value if value else None

    def get(self, section, key, default=None, required=False):
        value = self._raw(section, key)
        if value is None:
            if required:
                raise ConfigError(f"{self.path}: missing [{section}] {key}")
            return default
        return value

    def get_int(self, section, key, default=None, required=False):
        value = self.get(section, key, None, required)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{self.path}: [{section}] {key}={value!r} is not an integer")

    def get_float(self, section, key, default=None, required=False):
        value = self.get(section, key, None, required)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{self.path}: [{section}] {key}={value!r} is not a number")

    def get_bool(self, section, key, default=False):
        value = self.get(section, key)
        if value is None:
            return default
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.path}: [{section}] {key}={value!r} is not a boolean")

    def get_int_list(self, section, key, default=None):
        value = self.get(section, key)
        if value is None:
            return default
        try:
            return [int(v) for v in value.replace(";", ",").split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self.path}: [{section}] {key}={value!r} is not an integer list")

    def set(self, section, key, value):
        if not self._p.has_section(section):
            self._p.add_section(section)
        self._p[section][key] = str(value)

    def echo(self, out_dir, name="resolved.ini"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as f:
            self._p.write(f)


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(parser, path)


def _seed_and_out(cfg: RunConfig, args) -> tuple[int, str]:
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.out is not None:
        cfg.set("run", "out", args.out)
    seed = cfg.get_int("run", "seed", 0)
    out = cfg.get("run", "out", required=True)
    os.makedirs(out, exist_ok=True)
    return seed, out


def _schedule_from(cfg: RunConfig):
    return make_linear_schedule(
        cfg.get_int("schedule", "steps", 1000),
        cfg.get_float("schedule", "beta_start", 1e-4),
        cfg.get_float("schedule", "beta_end", 2e-2),
    )


def cmd_gen(cfg: RunConfig, args) -> int:
    seed, out = _seed_and_out(cfg, args)
    task = cfg.get("world", "task", "local")
    shape = (cfg.get_int("world", "height", 32),
             cfg.get_int("world", "width", 32),
             cfg.get_int("world", "channels", 1))
    dataset = sample_dataset(
        task=task,
        count=cfg.get_int("world", "count", required=True),
        k_range=(cfg.get_int("world", "k_min", 1), cfg.get_int("world", "k_max", 2)),
        palette=cfg.get_int("world", "palette", 0),
        seed=seed,
        image_shape=shape,
        min_sep=cfg.get_float("world", "min_sep", 0.15),
        margin=cfg.get_float("world", "margin", 0.1),
        radius=cfg.get_float("world", "radius", 0.12),
        jitter=cfg.get_float("world", "jitter", 0.08),
        n_attrs=cfg.get_int("world", "n_attrs", 3),
    )
    path = os.path.join(out, "dataset.dat")
    save_dataset(dataset, path)
    cfg.echo(out)
    print(f"wrote {path} ({dataset.header.count} scenes, task={task})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    seed, out = _seed_and_out(cfg, args)
    dataset = load_dataset(cfg.get("train", "dataset", required=True))
    schedule = _schedule_from(cfg)
    tconf = TrainConfig(
        learning_rate=cfg.get_float("train", "learning_rate", 2e-5),
        batch_size=cfg.get_int("train", "batch_size", 128),
        step_budget=cfg.get_int("train", "step_budget", required=True),
        optimizer=cfg.get("train", "optimizer", "adaptive-moment"),
        seed=seed,
        gradient_clip_norm=cfg.get_float("train", "gradient_clip_norm"),
    )
    hidden = tuple(cfg.get_int_list("arch", "hidden", [64, 64]))
    report = train_loop(
        dataset, schedule, tconf,
        hidden_sizes=hidden,
        time_embed_dim=cfg.get_int("arch", "time_embed_dim", 16),
        concept_encoding=cfg.get("arch", "concept_encoding"),
        rbf_grid=cfg.get_int("arch", "rbf_grid", 6),
        checkpoint_dir=out,
        checkpoint_every=cfg.get_int("train", "checkpoint_every"),
    )
    from .network import save_params
    ckpt = os.path.join(out, "checkpoint.ckpt")
    save_params(report.params, ckpt, {
        "steps": schedule.step_count,
        "beta_start": float(schedule.betas[0]),
        "beta_end": float(schedule.betas[-1]),
    })
    write_loss_csv(os.path.join(out, "loss.csv"), report.loss_trace)
    cfg.echo(out)
    print(f"wrote {ckpt} (final loss(50) = {report.loss_trace[-50:].mean():.4f})")
    return EXIT_OK


def _inference_config(cfg: RunConfig, seed: int, restarts=None) -> InferenceConfig:
    t_min = cfg.get_int("infer", "t_min")
    t_max = cfg.get_int("infer", "t_max")
    trange = (t_min, t_max) if t_min is not None and t_max is not None else None
    return InferenceConfig(
        n_sample=cfg.get_int("infer", "sample_count", 64),
        n_step=cfg.get_int("infer", "sgd_steps", 200),
        restarts=restarts if restarts is not None else cfg.get_int("infer", "restarts", 8),
        concept_lr=cfg.get_float("infer", "concept_lr", 0.05),
        k_min=cfg.get_int("infer", "k_min", 1),
        k_max=cfg.get_int("infer", "k_max", 1),
        prune_cadence=cfg.get_int("infer", "prune_cadence"),
        prune_fraction=cfg.get_float("infer", "prune_fraction", 0.5),
        seed=seed,
        timestep_range=trange,
        nested_restarts=cfg.get_bool("infer", "nested", False),
        max_step=cfg.get_float("infer", "max_step"),
    )


def _parse_vocabulary(text: str):
    """'0.3 0.3; 0.7 0.5; 0.5 0.8' -> list of coordinate ConceptVectors."""
    vectors = []
    for chunk in text.split(";"):
        parts = [p for p in chunk.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ConfigError(f"vocabulary entry {chunk!r} is not an x y pair")
        vectors.append(coordinate_concept([float(parts[0]), float(parts[1])]))
    return vectors


def _infer_one_scene(model, rec, schedule, algorithm, icfg, cfg, n_attrs):
    if algorithm == "continuous":
        k = cfg.get_int("infer", "k", 0) or rec.concepts.k
        return infer_mod.infer_continuous_sgd(model, rec.image, k, schedule, icfg)
    if algorithm == "count":
        return infer_mod.infer_concept_count(model, rec.image, schedule, icfg)
    if algorithm == "enumerate":
        vocab = [[onehot_concept(a, bit, n_attrs) for bit in (0, 1)]
                 for a in range(n_attrs)]
        return infer_mod.infer_discrete_enumerate(model, rec.image, vocab, schedule, icfg)
    if algorithm == "relaxed":
        return infer_mod.infer_discrete_relaxed(model, rec.image, n_attrs, schedule, icfg)
    if algorithm == "weighted":
        vocab_text = cfg.get("infer", "vocabulary", required=True)
        pick = cfg.get_int("infer", "pick_count", 2)
        return infer_mod.infer_weighted_composition(
            model, rec.image, _parse_vocabulary(vocab_text), pick, schedule, icfg)
    raise ConfigError(f"unknown inference algorithm {algorithm!r}")


def cmd_infer(cfg: RunConfig, args) -> int:
    seed, out = _seed_and_out(cfg, args)
    dataset = load_dataset(cfg.get("infer", "dataset", required=True))
    params, sched_cfg = load_params(cfg.get("infer", "checkpoint", required=True))
    if sched_cfg is not None:
        schedule = make_linear_schedule(sched_cfg["steps"], sched_cfg["beta_start"],
                                        sched_cfg["beta_end"])
    else:
        schedule = _schedule_from(cfg)
    model = NetworkModel(params, schedule)
    algorithm = cfg.get("infer", "algorithm", "continuous")
    limit = cfg.get_int("infer", "scene_limit", 0)
    records = dataset.records[:limit] if limit else dataset.records
    n_attrs = dataset.header.options.get("n_attrs", 3)
    draw_overlay = cfg.get_bool("infer", "overlay", True)

    reports_dir = os.path.join(out, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    if draw_overlay:
        overlays_dir = os.path.join(out, "overlays")
        os.makedirs(overlays_dir, exist_ok=True)

    root = np.random.SeedSequence(seed)
    for i, (rec, child) in enumerate(zip(records, root.spawn(len(records)))):
        icfg = _inference_config(cfg, seed=int(child.generate_state(1, np.uint64)[0]))
        report = _infer_one_scene(model, rec, schedule, algorithm, icfg, cfg, n_attrs)
        with open(os.path.join(reports_dir, f"scene_{i:04d}.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        if draw_overlay and dataset.header.task == TASK_LOCAL:
            rgb = overlay_image(rec.image,
                                predicted=report.chosen.matrix(),
                                truth=rec.concepts.matrix())
            write_ppm(os.path.join(overlays_dir, f"scene_{i:04d}.ppm"), rgb)
    cfg.echo(out)
    print(f"wrote {len(records)} reports under {reports_dir}")
    return EXIT_OK


def _load_reports(reports_dir):
    if not os.path.isdir(reports_dir):
        raise FileNotFoundError(f"report directory not found: {reports_dir}")
    names = sorted(n for n in os.listdir(reports_dir)
                   if n.startswith("scene_") and n.endswith(".json"))
    reports = []
    for name in names:
        with open(os.path.join(reports_dir, name)) as f:
            reports.append(InferenceReport.from_dict(json.load(f)))
    return reports


def cmd_eval(cfg: RunConfig, args) -> int:
    _, out = _seed_and_out(cfg, args)
    dataset = load_dataset(cfg.get("eval", "dataset", required=True))
    reports = _load_reports(cfg.get("eval", "reports", required=True))
    if len(reports) > len(dataset.records):
        raise ParameterError(
            f"{len(reports)} reports but only {len(dataset.records)} scenes"
        )
    records = dataset.records[:len(reports)]
    path = os.path.join(out, "metrics.csv")
    if dataset.header.task == TASK_LOCAL:
        preds = [r.chosen.matrix() for r in reports]
        truths = [rec.concepts.matrix() for rec in records]
        metrics = perception_metrics(
            preds, truths, threshold=cfg.get_float("eval", "threshold", 0.002))
        metrics.to_csv(path)
        print(f"perception_rate={metrics.perception_rate:.4f} "
              f"estimation_error={metrics.estimation_error:.6f}")
    else:
        pred_bits = []
        for r in reports:
            bits = [int(round(v.values[2 * a])) for a, v in enumerate(r.chosen.concepts)]
            pred_bits.append(bits)
        true_bits = [list(rec.spec.attributes) for rec in records]
        acc = multi_label_accuracy(pred_bits, true_bits)
        with open(path, "w") as f:
            f.write("scene_id,predicted,truth,match\n")
            for i, (p, t) in enumerate(zip(pred_bits, true_bits)):
                f.write(f"{i},{''.join(map(str, p))},{''.join(map(str, t))},{int(p == t)}\n")
            f.write(f"summary,multi_label_accuracy={acc!r},,\n")
        print(f"multi_label_accuracy={acc:.4f}")
    cfg.echo(out)
    print(f"wrote {path}")
    return EXIT_OK


def _sweep_cell(cell):
    """One (restarts, seed) cell: inference over the battery + metrics."""
    (config_path, restarts, seed, out_dir) = cell
    cfg = load_config(config_path)
    dataset = load_dataset(cfg.get("infer", "dataset", required=True))
    params, sched_cfg = load_params(cfg.get("infer", "checkpoint", required=True))
    schedule = make_linear_schedule(sched_cfg["steps"], sched_cfg["beta_start"],
                                    sched_cfg["beta_end"]) if sched_cfg else _schedule_from(cfg)
    model = NetworkModel(params, schedule)
    limit = cfg.get_int("infer", "scene_limit", 0)
    records = dataset.records[:limit] if limit else dataset.records
    preds, truths = [], []
    root = np.random.SeedSequence(seed)
    for rec, child in zip(records, root.spawn(len(records))):
        icfg = _inference_config(cfg, seed=int(child.generate_state(1, np.uint64)[0]),
                                 restarts=restarts)
        k = cfg.get_int("infer", "k", 0) or rec.concepts.k
        report = infer_mod.infer_continuous_sgd(model, rec.image, k, schedule, icfg)
        preds.append(report.chosen.matrix())
        truths.append(rec.concepts.matrix())
    metrics = perception_metrics(preds, truths)
    return (restarts, seed, metrics.perception_rate, metrics.estimation_error)


def cmd_sweep(cfg: RunConfig, args) -> int:
    seed, out = _seed_and_out(cfg, args)
    restarts = cfg.get_int_list("sweep", "restarts", [1, 5, 10, 20])
    seeds = cfg.get_int_list("sweep", "seeds", [seed])
    jobs = args.jobs if args.jobs is not None else cfg.get_int("sweep", "jobs", 1)
    cells = [(cfg.path, r, s, out) for r in restarts for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    path = os.path.join(out, "sweep.csv")
    with open(path, "w") as f:
        f.write("restarts,seed,perception_rate,estimation_error\n")
        for r, s, rate, err in rows:
            f.write(f"{r},{s},{rate!r},{err!r}\n")
    cfg.echo(out)
    print(f"wrote {path} ({len(rows)} cells)")
    return EXIT_OK


def cmd_describe(args) -> int:
    path = args.file
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"CSDS":
        header = load_dataset(path).header
        print(describe_dataset_header(header))
    elif magic == b"CSCK":
        params, sched_cfg = load_params(path)
        arch = params.arch
        print(f"checkpoint     : {path}")
        print(f"image shape    : {arch.image_shape}")
        print(f"concept dim    : {arch.concept_dim} (encoding {arch.concept_encoding})")
        print(f"hidden sizes   : {arch.hidden_sizes}")
        print(f"parameters     : {params.param_count}")
        print(f"schedule       : {json.dumps(sched_cfg)}")
    else:
        raise DataFormatError(f"{path}: not a composcene dataset or checkpoint")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="composcene",
        description="compositional scene inference via composed denoisers",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "infer", "eval", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=None)
    p = sub.add_parser("describe")
    p.add_argument("file")
    args = parser.parse_args(argv)

    try:
        if args.command == "describe":
            return cmd_describe(args)
        cfg = load_config(args.config)
        handler = {
            "gen": cmd_gen, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg, args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
