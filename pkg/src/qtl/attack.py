"""FGSM attacks, adversarial training and epsilon sweeps."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, DataError, write_atomic
from .hybrid import HybridModel, TrainConfig, evaluate, input_gradient, train

log = logging.getLogger(__name__)

REPORT_HEADER = ["epsilon", "clean_acc", "attack_acc", "adv_train_acc"]

# Published full-scale QuantumTL figures at epsilon 0.1/0.2/0.3, kept for
# side-by-side reading of desk-scale reports; nothing asserts against them.
REFERENCE_QTL_FIGURES = {
    0.1: {"clean_acc": 0.9610, "attack_acc": 0.5385, "adv_train_acc": 0.7187},
    0.2: {"clean_acc": 0.9610, "attack_acc": 0.5090, "adv_train_acc": 0.6930},
    0.3: {"clean_acc": 0.9610, "attack_acc": 0.4745, "adv_train_acc": 0.6782},
}


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    clamp_range: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.clamp_range is not None and not self.clamp_range[0] < self.clamp_range[1]:
            raise ValueError("clamp_range needs lo < hi")


def project_linf(x: np.ndarray, x_adv: np.ndarray, epsilon: float) -> np.ndarray:
    """Pull ``x_adv`` into the L-inf ball around ``x``.

    Clipping ``x_adv - x`` and adding it back can overshoot by an ulp, so any
    component still outside is stepped towards ``x`` one ulp at a time.
    """
    out = np.clip(x_adv, x - epsilon, x + epsilon)
    for _ in range(8):
        bad = np.abs(out - x) > epsilon
        if not bad.any():
            break
        out[bad] = np.nextafter(out[bad], x[bad])
    return out


def fgsm(model: HybridModel, x, labels, cfg: AttackConfig) -> np.ndarray:
    """``x + eps * sign(dL/dx)`` with sign(0) = 0, optional clamp, then L-inf projection."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    g = input_gradient(model, x, labels)
    x_adv = x + cfg.epsilon * np.sign(g)
    if cfg.clamp_range is not None:
        x_adv = np.clip(x_adv, *cfg.clamp_range)
    return project_linf(x, x_adv, cfg.epsilon)


def attack_dataset(model: HybridModel, ds: Dataset, cfg: AttackConfig,
                   batch_size: int = 256) -> Dataset:
    parts = [fgsm(model, ds.features[i:i + batch_size], ds.labels[i:i + batch_size], cfg)
             for i in range(0, len(ds), batch_size)]
    return Dataset(np.concatenate(parts), ds.labels, ds.n_classes, f"{ds.name}-fgsm")


def attacked_accuracy(model: HybridModel, ds: Dataset, cfg: AttackConfig) -> float:
    """White-box FGSM accuracy using each sample's true label."""
    if len(ds) == 0:
        raise DataError("cannot attack an empty dataset")
    return evaluate(model, attack_dataset(model, ds, cfg))


def adversarial_augment(cfg: AttackConfig) -> Callable:
    """Batch hook for :func:`qtl.hybrid.train`: clean batch followed by its FGSM copy,
    generated from the current parameters."""

    def augment(model, x, y):
        return np.concatenate([x, fgsm(model, x, y, cfg)]), np.concatenate([y, y])

    return augment


def duplicate_augment(model, x, y):
    return np.concatenate([x, x]), np.concatenate([y, y])


def adversarial_train(model: HybridModel, train_set: Dataset, cfg: AttackConfig,
                      train_config: TrainConfig, test_set: Dataset | None = None):
    """Train on 50/50 clean + FGSM batches. Returns ``(model, history)``."""
    if len(train_set) == 0:
        raise DataError("cannot train on an empty dataset")
    if cfg.epsilon == 0:
        log.warning("epsilon = 0: adversarial training degenerates to duplicated clean data")
    return train(model, train_set, train_config, test_set, augment=adversarial_augment(cfg))


@dataclass
class RobustnessRow:
    epsilon: float
    clean_acc: float
    attack_acc: float
    adv_train_acc: float
    adv_clean_acc: float = float("nan")


@dataclass
class RobustnessReport:
    rows: list[RobustnessRow] = field(default_factory=list)

    def validate(self) -> None:
        eps = [r.epsilon for r in self.rows]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("report epsilons must be strictly increasing")
        for r in self.rows:
            # adv_train_acc is NaN when no adversarial training was run
            vals = (r.clean_acc, r.attack_acc) + (() if np.isnan(r.adv_train_acc)
                                                   else (r.adv_train_acc,))
            for v in vals:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"accuracy {v} outside [0, 1]")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        self.validate()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([f"{getattr(r, k):.6f}" for k in REPORT_HEADER])
        return buf.getvalue()

    def save(self, path) -> None:
        write_atomic(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RobustnessReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != REPORT_HEADER:
            raise ValueError(f"unexpected report header {header}")
        rows = [RobustnessRow(*(float(v) for v in row)) for row in reader if row]
        report = cls(rows)
        report.validate()
        return report

    @classmethod
    def load(cls, path) -> "RobustnessReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def robustness_sweep(model_factory: Callable[[], HybridModel], train_set: Dataset,
                     test_set: Dataset, epsilons, train_config: TrainConfig,
                     clamp_range=None, standard: HybridModel | None = None) -> RobustnessReport:
    """Standard vs adversarially trained accuracy over an epsilon grid.

    ``model_factory`` must return a fresh, identically initialised model on every
    call. The standard model is trained once (or passed in) and reused for every
    epsilon; each epsilon gets its own adversarially trained model.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(e < 0 for e in epsilons):
        raise ValueError("epsilons must be a nonempty list of values >= 0")
    if standard is None:
        standard, _ = train(model_factory(), train_set, train_config)
    clean = evaluate(standard, test_set)
    rows = []
    for eps in sorted(epsilons):
        cfg = AttackConfig(eps, clamp_range)
        attacked = attacked_accuracy(standard, test_set, cfg)
        adv, _ = adversarial_train(model_factory(), train_set, cfg, train_config)
        rows.append(RobustnessRow(eps, clean, attacked, attacked_accuracy(adv, test_set, cfg),
                                  evaluate(adv, test_set)))
        log.info("eps %.3f clean %.3f attacked %.3f adv-trained %.3f", eps, clean, attacked,
                 rows[-1].adv_train_acc)
    return RobustnessReport(rows)
