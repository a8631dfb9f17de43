"""Command-line harness: ``qtl gen-data | train | evaluate | attack | adv-train | sweep``.

Configuration precedence is defaults < ``QTL_SEED`` (seed only) < ``--config``
JSON < explicit flags. The effective configuration is written to
``<out-dir>/config.json`` once every other output of the command exists.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field

from . import attack, data, hybrid
from .classical import make_schedule
from .hybrid import Mode, TrainConfig

log = logging.getLogger("qtl")

MODES = [m.value for m in Mode]
SCHEDULES = ("step", "const_linear")


@dataclass
class ExperimentConfig:
    mode: str = "quantum_tl"
    n_qubits: int = 6
    n_layers: int = 6
    optimizer: str = "adam"
    learning_rate: float = 0.0004
    batch_size: int = 16
    epochs: int = 50
    schedule: str = "step"
    seed: int = 0
    epsilons: list = field(default_factory=lambda: [0.1, 0.2, 0.3])
    # dataset source: CSV paths, or a synthetic spec when ``data`` is unset
    data: str | None = None
    source: str | None = None
    kind: str = "transfer_pair"
    n_samples: int = 2000
    n_target: int | None = None
    dim: int = 16
    n_classes: int = 4
    class_separation: float = 2.0
    clusters_per_class: int = 1
    informative_dims: int | None = None
    weak_feature_scale: float = 0.0
    rotation_angle: float = 0.3
    mean_shift: float = 0.2
    train_fraction: float = 0.8
    # schedule shape; StepDecay uses factor/every_n_epochs, ConstThenLinear the other two
    decay_factor: float = 0.1
    decay_every: int = 10
    const_epochs: int = 25
    decay_epochs: int = 25
    pretrain_epochs: int | None = None
    pretrain_learning_rate: float | None = None
    width: int = 32
    n_blocks: int = 2
    feature_dim: int = 16
    entangler: str = "linear"
    fixed_matrix: bool = False
    clamp: list | None = None
    threads: int = 1
    checkpoint: str | None = None
    out_dir: str = "runs"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 2 <= self.n_qubits <= 10:
            raise ValueError("n_qubits must be in 2..10")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be >= 0")
        if self.clamp is not None and len(self.clamp) != 2:
            raise ValueError("clamp needs two values lo hi")

    def schedule_obj(self):
        if self.schedule == "step":
            return make_schedule("step", factor=self.decay_factor,
                                 every_n_epochs=self.decay_every)
        return make_schedule("const_linear", const_epochs=self.const_epochs,
                             decay_epochs=self.decay_epochs)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.optimizer, self.learning_rate,
                           self.schedule_obj(), self.seed, self.threads)

    def pretrain_config(self) -> TrainConfig:
        cfg = self.train_config()
        if self.pretrain_epochs is not None:
            cfg.epochs = self.pretrain_epochs
        if self.pretrain_learning_rate is not None:
            cfg.learning_rate = self.pretrain_learning_rate
        return cfg


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def resolve_config(flags: dict, config_path: str | None, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    values = {}
    if env.get("QTL_SEED") not in (None, ""):
        try:
            values["seed"] = int(env["QTL_SEED"])
        except ValueError:
            raise ValueError(f"QTL_SEED must be an integer, got {env['QTL_SEED']!r}") from None
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a flat JSON object")
        unknown = sorted(set(loaded) - set(FIELDS))
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in flags.items() if v is not None})
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _kind(name: str) -> str:
    return name.replace("-", "_")


def synthetic_spec(cfg: ExperimentConfig) -> data.SyntheticSpec:
    return data.SyntheticSpec(
        kind=_kind(cfg.kind), n_samples=cfg.n_samples, dim=cfg.dim, n_classes=cfg.n_classes,
        class_separation=cfg.class_separation, seed=cfg.seed,
        clusters_per_class=cfg.clusters_per_class, informative_dims=cfg.informative_dims,
        weak_feature_scale=cfg.weak_feature_scale, rotation_angle=cfg.rotation_angle,
        mean_shift=cfg.mean_shift, n_target=cfg.n_target,
    )


def load_task(cfg: ExperimentConfig):
    """``(source or None, train, test)`` for the configured data source."""
    if cfg.data:
        target = data.load_csv(cfg.data)
        source = data.load_csv(cfg.source) if cfg.source else None
    else:
        out = data.gen_synthetic(synthetic_spec(cfg))
        source, target = out if isinstance(out, tuple) else (None, out)
        if cfg.source:
            source = data.load_csv(cfg.source)
    train, test = data.split(target, cfg.train_fraction, cfg.seed)
    return source, train, test


def get_extractor(cfg: ExperimentConfig, mode: Mode, source, cache: dict):
    if not mode.transfer:
        log.info("%s: no transfer learning, skipping pretraining", mode.value)
        return None
    if "ext" not in cache:
        if source is None:
            raise ValueError(f"{mode.value} needs a source task: use --kind transfer-pair or --source")
        log.info("pretraining extractor on %s (%d samples)", source.name, len(source))
        cache["ext"] = hybrid.pretrain_extractor(source, cfg.pretrain_config(), cfg.width,
                                                 cfg.n_blocks, cfg.feature_dim)
    return cache["ext"]


def model_factory(cfg: ExperimentConfig, mode: Mode, train: data.Dataset, ext):
    def make():
        return hybrid.build_model(
            mode, train.dim, train.n_classes, n_qubits=cfg.n_qubits, n_layers=cfg.n_layers,
            seed=cfg.seed, extractor=ext, width=cfg.width, n_blocks=cfg.n_blocks,
            feature_dim=cfg.feature_dim, entangler=cfg.entangler, fixed_matrix=cfg.fixed_matrix,
        )
    return make


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "train_acc", "test_acc"])
    for row in history:
        w.writerow([row["epoch"], repr(row["loss"]), repr(row["train_acc"]), repr(row["test_acc"])])
    return buf.getvalue()


def combined_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode"] + attack.REPORT_HEADER)
    for mode, rep in reports.items():
        for line in rep.to_csv().splitlines()[1:]:
            w.writerow([mode] + line.split(","))
    return buf.getvalue()


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _finish(cfg: ExperimentConfig, outputs: dict) -> None:
    """Write every output atomically, then the config echo."""
    for name, text in outputs.items():
        data.write_atomic(_path(cfg, name), text)
        log.info("wrote %s", _path(cfg, name))
    data.write_atomic(_path(cfg, "config.json"),
                      json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n")


def _clamp(cfg):
    return tuple(cfg.clamp) if cfg.clamp is not None else None


def _checkpoint_text(model) -> str:
    return json.dumps(hybrid.model_to_dict(model), indent=1)


def _train_standard(cfg, mode, source, train, test, cache):
    ext = get_extractor(cfg, mode, source, cache)
    model = model_factory(cfg, mode, train, ext)()
    model, history = hybrid.train(model, train, cfg.train_config(), test)
    return model, history, ext


# commands

def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    out = data.gen_synthetic(synthetic_spec(cfg))
    path = args.out or os.path.join(cfg.out_dir, f"{_kind(cfg.kind)}.csv")
    if isinstance(out, tuple):
        stem = path[:-4] if path.endswith(".csv") else path
        for ds, suffix in zip(out, ("source", "target")):
            p = f"{stem}-{suffix}.csv"
            data.save_csv(ds, p)
            print(f"{p}: {len(ds)} rows")
    else:
        data.save_csv(out, path)
        print(f"{path}: {len(out)} rows")
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    mode = Mode(cfg.mode)
    source, train, test = load_task(cfg)
    model, history, _ = _train_standard(cfg, mode, source, train, test, {})
    print(f"{mode.value}: test accuracy {history[-1]['test_acc']:.4f}")
    _finish(cfg, {"checkpoint.json": _checkpoint_text(model), "history.csv": history_csv(history)})
    return 0


def _load_model(cfg):
    if not cfg.checkpoint:
        raise ValueError("--checkpoint is required")
    return hybrid.load_checkpoint(cfg.checkpoint)


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    model = _load_model(cfg)
    _, train, test = load_task(cfg)
    result = {"mode": model.mode.value, "train_acc": hybrid.evaluate(model, train),
              "test_acc": hybrid.evaluate(model, test), "n_test": len(test)}
    print(f"{model.mode.value}: test accuracy {result['test_acc']:.4f} on {len(test)} samples")
    _finish(cfg, {"evaluation.json": json.dumps(result, indent=2) + "\n"})
    return 0


def cmd_attack(args, cfg: ExperimentConfig) -> int:
    model = _load_model(cfg)
    _, _, test = load_task(cfg)
    clean = hybrid.evaluate(model, test)
    rows = []
    for eps in sorted(cfg.epsilons):
        acc = attack.attacked_accuracy(model, test, attack.AttackConfig(eps, _clamp(cfg)))
        log.info("eps %.3f attacked accuracy %.4f", eps, acc)
        rows.append(attack.RobustnessRow(eps, clean, acc, math.nan))
    report = attack.RobustnessReport(rows)
    print(report.to_csv(), end="")
    _finish(cfg, {"attack.csv": report.to_csv()})
    return 0


def cmd_adv_train(args, cfg: ExperimentConfig) -> int:
    mode = Mode(cfg.mode)
    source, train, test = load_task(cfg)
    cache = {}
    if cfg.checkpoint:
        standard = hybrid.load_checkpoint(cfg.checkpoint)
        mode = standard.mode
        # reuse the checkpoint's frozen extractor for the adversarial models
        ext = standard.extractor if mode.transfer else None
    else:
        standard, _, ext = _train_standard(cfg, mode, source, train, test, cache)
    if ext is None and mode.transfer:
        ext = get_extractor(cfg, mode, source, cache)
    factory = model_factory(cfg, mode, train, ext)
    clean = hybrid.evaluate(standard, test)
    rows, outputs = [], {}
    for eps in sorted(cfg.epsilons):
        acfg = attack.AttackConfig(eps, _clamp(cfg))
        attacked = attack.attacked_accuracy(standard, test, acfg)
        adv, _ = attack.adversarial_train(factory(), train, acfg, cfg.train_config(), test)
        row = attack.RobustnessRow(eps, clean, attacked, attack.attacked_accuracy(adv, test, acfg),
                                   hybrid.evaluate(adv, test))
        log.info("eps %.3f clean %.4f attacked %.4f adv-trained attacked %.4f adv-trained clean %.4f",
                 eps, clean, attacked, row.adv_train_acc, row.adv_clean_acc)
        rows.append(row)
        outputs[f"adv-checkpoint-eps{eps:g}.json"] = _checkpoint_text(adv)
    report = attack.RobustnessReport(rows)
    print(report.to_csv(), end="")
    outputs["report.csv"] = report.to_csv()
    _finish(cfg, outputs)
    return 0


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    source, train, test = load_task(cfg)
    cache, reports, outputs = {}, {}, {}
    for mode in Mode:
        ext = get_extractor(cfg, mode, source, cache)
        log.info("sweep: %s", mode.value)
        reports[mode.value] = attack.robustness_sweep(
            model_factory(cfg, mode, train, ext), train, test, cfg.epsilons, cfg.train_config(),
            _clamp(cfg))
        outputs[f"sweep-{mode.value}.csv"] = reports[mode.value].to_csv()
    outputs["sweep.csv"] = combined_csv(reports)
    print(outputs["sweep.csv"], end="")
    _finish(cfg, outputs)
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate,
            "attack": cmd_attack, "adv-train": cmd_adv_train, "sweep": cmd_sweep}


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="flat JSON file of ExperimentConfig fields")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--n-qubits", type=int)
    g.add_argument("--n-layers", type=int)
    g.add_argument("--optimizer", choices=["adam", "sgd"])
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--schedule", choices=SCHEDULES)
    g.add_argument("--decay-factor", type=float)
    g.add_argument("--decay-every", type=int)
    g.add_argument("--const-epochs", type=int)
    g.add_argument("--decay-epochs", type=int)
    g.add_argument("--pretrain-epochs", type=int)
    g.add_argument("--pretrain-learning-rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--epsilons", type=float, nargs="+")
    g.add_argument("--clamp", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--width", type=int)
    g.add_argument("--n-blocks", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--entangler", choices=["linear", "ring", "none"])
    g.add_argument("--fixed-matrix", action="store_true", default=None)
    g.add_argument("--threads", type=int)
    g.add_argument("--checkpoint")
    g.add_argument("--out-dir")
    g.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    d = p.add_argument_group("data")
    d.add_argument("--data", help="target dataset CSV (otherwise synthetic)")
    d.add_argument("--source", help="source dataset CSV for pretraining")
    d.add_argument("--kind", choices=["blobs", "two-moons", "transfer-pair",
                                      "two_moons", "transfer_pair"])
    d.add_argument("--n", dest="n_samples", type=int)
    d.add_argument("--n-target", type=int)
    d.add_argument("--dim", type=int)
    d.add_argument("--classes", dest="n_classes", type=int)
    d.add_argument("--separation", dest="class_separation", type=float)
    d.add_argument("--clusters-per-class", type=int)
    d.add_argument("--informative-dims", type=int)
    d.add_argument("--weak-feature-scale", type=float)
    d.add_argument("--rotation-angle", type=float)
    d.add_argument("--mean-shift", type=float)
    d.add_argument("--train-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "gen-data":
            p.add_argument("--out", help="CSV path (transfer pairs add -source/-target)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in FIELDS}
    if flags.get("kind"):
        flags["kind"] = _kind(flags["kind"])
    try:
        cfg = resolve_config(flags, args.config)
        return COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"qtl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
