"""Hybrid model: extractor -> reducer -> squash -> encode -> VQC -> measure -> head.

Classical baselines swap the quantum block for a dense + tanh layer of the
same width, so all four modes share one interface.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import data as data_mod
from .classical import (
    DenseLayer,
    OptimizerState,
    ResidualBlock,
    StepDecay,
    ConstThenLinear,
    cross_entropy_batch,
    make_schedule,
    optimizer_step,
    relu,
    relu_grad,
    schedule_name,
)
from .data import Dataset, DataError
from .encoding import EncodingSpec, angles_from
from .rng import Rng, derive_seed
from .vqc import CircuitParams, circuit_jacobians

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "qtl-checkpoint"
CHECKPOINT_VERSION = 1


class Mode(str, Enum):
    QUANTUM_TL = "quantum_tl"
    QUANTUM_NO_TL = "quantum_no_tl"
    CLASSICAL_TL = "classical_tl"
    CLASSICAL_NO_TL = "classical_no_tl"

    @property
    def quantum(self) -> bool:
        return self in (Mode.QUANTUM_TL, Mode.QUANTUM_NO_TL)

    @property
    def transfer(self) -> bool:
        return self in (Mode.QUANTUM_TL, Mode.CLASSICAL_TL)


@dataclass
class Extractor:
    """Input projection + ReLU, residual blocks, then a dense map to the features."""

    stem: DenseLayer
    blocks: list[ResidualBlock]
    head: DenseLayer

    @classmethod
    def init(cls, rng: Rng, input_dim: int, width: int = 32, n_blocks: int = 2,
             feature_dim: int = 16) -> "Extractor":
        stem = DenseLayer.init(rng, input_dim, width)
        blocks = [ResidualBlock.init(rng, width) for _ in range(n_blocks)]
        return cls(stem, blocks, DenseLayer.init(rng, width, feature_dim))

    @property
    def input_dim(self) -> int:
        return self.stem.n_in

    @property
    def feature_dim(self) -> int:
        return self.head.n_out

    @property
    def frozen(self) -> bool:
        return self.stem.frozen and self.head.frozen and all(b.frozen for b in self.blocks)

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.stem.frozen = self.head.frozen = value
        for b in self.blocks:
            b.frozen = value

    def layers(self) -> list[tuple[str, DenseLayer]]:
        out = [("stem", self.stem)]
        for i, b in enumerate(self.blocks):
            out += [(f"block{i}.first", b.first), (f"block{i}.second", b.second)]
        return out + [("head", self.head)]

    def forward(self, x: np.ndarray):
        pre = self.stem.forward(x)
        h = relu(pre)
        caches = []
        for b in self.blocks:
            h, c = b.forward(h)
            caches.append(c)
        return self.head.forward(h), (x, pre, caches, h)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy: np.ndarray):
        """Returns ``(dx, grads)`` with grads ordered like :meth:`layers` (W, b each)."""
        x, pre, caches, h = cache
        dh, g_head = self.head.backward(h, dy)
        g_blocks = []
        for b, c in zip(reversed(self.blocks), reversed(caches)):
            dh, g = b.backward(c, dh)
            g_blocks.append(g)
        dpre = dh * relu_grad(pre)
        dx, g_stem = self.stem.backward(x, dpre)
        grads = list(g_stem)
        for g in reversed(g_blocks):
            grads += g
        return dx, grads + list(g_head)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 0.0004
    schedule: StepDecay | ConstThenLinear = field(default_factory=StepDecay)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.optimizer, self.learning_rate, self.schedule)


class HybridModel:
    """See module docstring. Use :func:`build_model` to construct one."""

    def __init__(self, mode: Mode, extractor: Extractor, reducer: DenseLayer,
                 classifier: DenseLayer, encoding: EncodingSpec,
                 vqc: CircuitParams | None = None, mixer: DenseLayer | None = None,
                 fixed_matrix: np.ndarray | None = None, seed_lineage: dict | None = None):
        self.mode = Mode(mode)
        self.extractor = extractor
        self.reducer = reducer
        self.classifier = classifier
        self.encoding = encoding
        self.vqc = vqc
        self.mixer = mixer
        self.fixed_matrix = fixed_matrix
        self.seed_lineage = dict(seed_lineage or {})
        self.threads = 1
        self.circuit_evals = 0
        self._check()

    def _check(self) -> None:
        w = self.reducer.n_out
        if self.reducer.n_in != self.extractor.feature_dim:
            raise ValueError("reducer input width must equal extractor feature_dim")
        if self.encoding.n_features != w or self.classifier.n_in != w:
            raise ValueError("reducer, encoding and classifier widths disagree")
        if self.mode.quantum:
            if self.vqc is None or self.vqc.n_qubits != w:
                raise ValueError("quantum modes need a circuit with n_qubits == reducer width")
        elif self.mixer is None or self.mixer.n_in != w or self.mixer.n_out != w:
            raise ValueError("classical modes need a square mixer of the reducer width")
        if self.fixed_matrix is not None and self.fixed_matrix.shape != (w, w):
            raise ValueError("fixed matrix must be square of the reducer width")
        if self.mode.transfer and not self.extractor.frozen:
            raise ValueError("transfer-learning modes require a frozen extractor")

    @property
    def input_dim(self) -> int:
        return self.extractor.input_dim

    @property
    def n_classes(self) -> int:
        return self.classifier.n_out

    @property
    def width(self) -> int:
        return self.reducer.n_out

    def parameters(self) -> list[tuple[str, np.ndarray, bool]]:
        """``(name, array, frozen)`` in the order :func:`backward` returns gradients."""
        out = []
        for name, layer in self.extractor.layers():
            out += [(f"extractor.{name}.weights", layer.weights, layer.frozen),
                    (f"extractor.{name}.bias", layer.bias, layer.frozen)]
        out += [("reducer.weights", self.reducer.weights, self.reducer.frozen),
                ("reducer.bias", self.reducer.bias, self.reducer.frozen)]
        if self.mode.quantum:
            out.append(("vqc.angles", self.vqc.angles, False))
        else:
            out += [("mixer.weights", self.mixer.weights, self.mixer.frozen),
                    ("mixer.bias", self.mixer.bias, self.mixer.frozen)]
        out += [("classifier.weights", self.classifier.weights, self.classifier.frozen),
                ("classifier.bias", self.classifier.bias, self.classifier.frozen)]
        return out

    def trainable(self) -> list[np.ndarray]:
        return [p for _, p, frozen in self.parameters() if not frozen]

    def copy(self) -> "HybridModel":
        return copy.deepcopy(self)


def build_model(mode, input_dim: int, n_classes: int, n_qubits: int = 6, n_layers: int = 6,
                seed: int = 0, extractor: Extractor | None = None, width: int = 32,
                n_blocks: int = 2, feature_dim: int = 16, angle_scale: float = math.pi / 2,
                use_tanh: bool = True, entangler: str = "linear",
                fixed_matrix: bool = False) -> HybridModel:
    """Fresh model. Transfer modes take a copy of ``extractor`` and freeze it."""
    mode = Mode(mode)
    if not 1 <= n_qubits <= 10:
        raise ValueError("n_qubits must be in 1..10")
    lineage = {"model_seed": seed}
    if mode.transfer:
        if extractor is None:
            raise ValueError(f"{mode.value} needs a pretrained extractor")
        ext = copy.deepcopy(extractor)
        ext.frozen = True
    elif extractor is not None:
        ext = copy.deepcopy(extractor)
        ext.frozen = False
    else:
        ext = Extractor.init(Rng(derive_seed(seed, "extractor")), input_dim, width, n_blocks,
                             feature_dim)
    if ext.input_dim != input_dim:
        raise ValueError(f"extractor expects input_dim {ext.input_dim}, got {input_dim}")
    reducer = DenseLayer.init(Rng(derive_seed(seed, "reducer")), ext.feature_dim, n_qubits)
    classifier = DenseLayer.init(Rng(derive_seed(seed, "classifier")), n_qubits, n_classes)
    vqc = mixer = None
    if mode.quantum:
        vqc = CircuitParams.random(n_qubits, n_layers, Rng(derive_seed(seed, "vqc")),
                                   entangler=entangler)
    else:
        mixer = DenseLayer.init(Rng(derive_seed(seed, "mixer")), n_qubits, n_qubits)
    fixed = None
    if fixed_matrix:
        g = Rng(derive_seed(seed, "fixed")).normal_array((n_qubits, n_qubits))
        q, r = np.linalg.qr(g)
        fixed = q * np.sign(np.diag(r))
    return HybridModel(mode, ext, reducer, classifier,
                       EncodingSpec(n_qubits, angle_scale, use_tanh), vqc, mixer, fixed, lineage)


def _run(model: HybridModel, x: np.ndarray, labels=None, param_grads: bool = False,
         input_grad: bool = False):
    """Forward pass and, given labels, the backward pass.

    Returns ``(logits, loss_sum, grads, dx)``; grads follow ``model.parameters()``
    and are summed over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of width {model.input_dim}, got shape {x.shape}")
    backward = labels is not None and (param_grads or input_grad)
    feats, ecache = model.extractor.forward(x)
    u = model.reducer.forward(feats)
    if model.mode.quantum:
        theta, dtheta = angles_from(u, model.encoding)
        z, dzdp, dzdx, evals = circuit_jacobians(
            theta, model.vqc, wrt_params=backward and param_grads, wrt_inputs=backward,
            threads=model.threads,
        )
        model.circuit_evals += evals
    else:
        z = np.tanh(model.mixer.forward(u))
    h = z @ model.fixed_matrix.T if model.fixed_matrix is not None else z
    logits = model.classifier.forward(h)
    if labels is None:
        return logits, None, None, None
    losses, dlogits = cross_entropy_batch(logits, labels)
    loss_sum = float(losses.sum())
    if not backward:
        return logits, loss_sum, None, None

    dh, g_cls = model.classifier.backward(h, dlogits)
    dz = dh @ model.fixed_matrix if model.fixed_matrix is not None else dh
    if model.mode.quantum:
        du = np.einsum("bn,bnm->bm", dz, dzdx) * dtheta
        mid = []
        if param_grads:
            per_sample = np.einsum("bn,bnp->bp", dz, dzdp)
            mid = [per_sample.sum(axis=0).reshape(model.vqc.angles.shape)]
    else:
        du, g_mix = model.mixer.backward(u, dz * (1.0 - z * z))
        mid = list(g_mix)
    dfeat, g_red = model.reducer.backward(feats, du)
    dx, g_ext = model.extractor.backward(ecache, dfeat)
    grads = g_ext + list(g_red) + mid + list(g_cls) if param_grads else None
    return logits, loss_sum, grads, dx


def forward(model: HybridModel, x) -> np.ndarray:
    """Logits for one vector (returns 1-d) or a batch (returns 2-d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    logits = _run(model, np.atleast_2d(x))[0]
    return logits[0] if single else logits


def loss(model: HybridModel, x, labels) -> float:
    """Summed cross-entropy over a batch (a single vector counts as a batch of one)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return _run(model, x, np.atleast_1d(labels))[1]


def backward(model: HybridModel, x, labels):
    """``(loss_sum, grads)`` with one gradient per entry of ``model.parameters()``,
    frozen entries included."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, loss_sum, grads, _ = _run(model, x, np.atleast_1d(labels), param_grads=True)
    return loss_sum, grads


def input_gradient(model: HybridModel, x, labels) -> np.ndarray:
    """dL/dx of the per-sample loss, same shape as ``x``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    dx = _run(model, np.atleast_2d(x), np.atleast_1d(labels), input_grad=True)[3]
    return dx[0] if single else dx


def predict(model: HybridModel, x, batch_size: int = 256) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = [np.argmax(forward(model, x[i:i + batch_size]), axis=1)
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def evaluate(model: HybridModel, ds: Dataset) -> float:
    """Accuracy; argmax ties go to the lowest class index."""
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, ds.features) == ds.labels))


def _step(model: HybridModel, x, y, opt: OptimizerState, epoch: int) -> float:
    loss_sum, grads = backward(model, x, y)
    params = model.parameters()
    n = x.shape[0]
    live = [(p, g / n) for (_, p, frozen), g in zip(params, grads) if not frozen]
    optimizer_step([p for p, _ in live], [g for _, g in live], opt, epoch)
    return loss_sum


def train(model: HybridModel, train_set: Dataset, config: TrainConfig,
          test_set: Dataset | None = None, augment=None):
    """Mini-batch training in place. Returns ``(model, history)``.

    ``augment(model, x, y) -> (x', y')`` rewrites each batch before the step
    (adversarial training hooks in here). History rows carry ``epoch``,
    ``loss`` (mean over the samples seen), ``train_acc`` and ``test_acc``.
    """
    if len(train_set) == 0:
        raise DataError("cannot train on an empty dataset")
    if train_set.labels.max() >= model.n_classes:
        raise DataError("dataset labels exceed the model's class count")
    model.threads = config.threads
    opt = config.optimizer_state()
    batch_seed = derive_seed(config.seed, "batches")
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        evals0 = model.circuit_evals
        total, seen = 0.0, 0
        for idx in data_mod.batches(len(train_set), config.batch_size, batch_seed, epoch):
            x, y = train_set.features[idx], train_set.labels[idx]
            if augment is not None:
                x, y = augment(model, x, y)
            total += _step(model, x, y, opt, epoch)
            seen += x.shape[0]
        row = {
            "epoch": epoch + 1,
            "loss": total / seen,
            "train_acc": evaluate(model, train_set),
            "test_acc": evaluate(model, test_set) if test_set is not None else float("nan"),
        }
        history.append(row)
        log.info("epoch %d loss %.4f train_acc %.3f test_acc %.3f (%.2fs, %d circuit evals)",
                 row["epoch"], row["loss"], row["train_acc"], row["test_acc"],
                 time.perf_counter() - t0, model.circuit_evals - evals0)
    return model, history


def pretrain_extractor(source: Dataset, config: TrainConfig, width: int = 32,
                       n_blocks: int = 2, feature_dim: int = 16, return_head: bool = False):
    """Train an extractor with a throwaway linear head on ``source``.

    The head is discarded (``return_head=True`` hands it back as
    ``(extractor, head)`` for inspection); the extractor is returned unfrozen.
    """
    if len(source) == 0:
        raise DataError("cannot pretrain on an empty dataset")
    ext = Extractor.init(Rng(derive_seed(config.seed, "extractor")), source.dim, width,
                         n_blocks, feature_dim)
    head = DenseLayer.init(Rng(derive_seed(config.seed, "pretrain-head")), feature_dim,
                           source.n_classes)
    params = []
    for _, layer in ext.layers():
        params += layer.params()
    params += head.params()
    opt = config.optimizer_state()
    batch_seed = derive_seed(config.seed, "pretrain-batches")
    for epoch in range(config.epochs):
        total = 0.0
        for idx in data_mod.batches(len(source), config.batch_size, batch_seed, epoch):
            x, y = source.features[idx], source.labels[idx]
            feats, cache = ext.forward(x)
            logits = head.forward(feats)
            losses, dlogits = cross_entropy_batch(logits, y)
            dfeat, g_head = head.backward(feats, dlogits)
            _, g_ext = ext.backward(cache, dfeat)
            n = x.shape[0]
            optimizer_step(params, [g / n for g in g_ext + g_head], opt, epoch)
            total += float(losses.sum())
        log.info("pretrain epoch %d loss %.4f", epoch + 1, total / len(source))
    return (ext, head) if return_head else ext


def extractor_accuracy(ext: Extractor, head: DenseLayer, ds: Dataset) -> float:
    return float(np.mean(np.argmax(head.forward(ext(ds.features)), axis=1) == ds.labels))


# checkpoint I/O

def _layer_dict(layer: DenseLayer) -> dict:
    return {"shape": list(layer.weights.shape), "frozen": layer.frozen,
            "weights": layer.weights.ravel().tolist(), "bias": layer.bias.tolist()}


def _layer_from(d: dict) -> DenseLayer:
    w = np.array(d["weights"], dtype=np.float64).reshape(d["shape"])
    return DenseLayer(w, np.array(d["bias"], dtype=np.float64), bool(d["frozen"]))


def model_to_dict(model: HybridModel) -> dict:
    ext = model.extractor
    out = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "mode": model.mode.value,
        "input_dim": model.input_dim,
        "n_classes": model.n_classes,
        "encoding": {"n_features": model.encoding.n_features,
                     "angle_scale": model.encoding.angle_scale,
                     "use_tanh": model.encoding.use_tanh},
        "extractor": {"stem": _layer_dict(ext.stem),
                      "blocks": [[_layer_dict(b.first), _layer_dict(b.second)] for b in ext.blocks],
                      "head": _layer_dict(ext.head)},
        "reducer": _layer_dict(model.reducer),
        "classifier": _layer_dict(model.classifier),
        "seed_lineage": model.seed_lineage,
    }
    if model.vqc is not None:
        out["vqc"] = {"n_layers": model.vqc.n_layers, "n_qubits": model.vqc.n_qubits,
                      "entangler": model.vqc.entangler,
                      "angles": model.vqc.angles.ravel().tolist()}
    if model.mixer is not None:
        out["mixer"] = _layer_dict(model.mixer)
    if model.fixed_matrix is not None:
        out["fixed_matrix"] = {"shape": list(model.fixed_matrix.shape),
                               "values": model.fixed_matrix.ravel().tolist()}
    return out


def model_from_dict(d: dict) -> HybridModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a qtl checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    e = d["extractor"]
    ext = Extractor(_layer_from(e["stem"]),
                    [ResidualBlock(_layer_from(a), _layer_from(b)) for a, b in e["blocks"]],
                    _layer_from(e["head"]))
    vqc = None
    if "vqc" in d:
        v = d["vqc"]
        vqc = CircuitParams(np.array(v["angles"], dtype=np.float64).reshape(
            v["n_layers"], v["n_qubits"], 3), v["entangler"])
    fixed = None
    if "fixed_matrix" in d:
        fixed = np.array(d["fixed_matrix"]["values"], dtype=np.float64).reshape(
            d["fixed_matrix"]["shape"])
    enc = EncodingSpec(**d["encoding"])
    return HybridModel(d["mode"], ext, _layer_from(d["reducer"]), _layer_from(d["classifier"]),
                       enc, vqc, _layer_from(d["mixer"]) if "mixer" in d else None, fixed,
                       d.get("seed_lineage"))


def save_checkpoint(model: HybridModel, path) -> None:
    data_mod.write_atomic(path, json.dumps(model_to_dict(model), indent=1))


def load_checkpoint(path) -> HybridModel:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed checkpoint {path}: {exc}") from None
    try:
        return model_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed checkpoint {path}: missing or bad field {exc}") from None


def train_config_to_dict(cfg: TrainConfig) -> dict:
    s = cfg.schedule
    sched = ({"factor": s.factor, "every_n_epochs": s.every_n_epochs}
             if isinstance(s, StepDecay) else
             {"const_epochs": s.const_epochs, "decay_epochs": s.decay_epochs})
    return {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "optimizer": cfg.optimizer,
            "learning_rate": cfg.learning_rate, "schedule": schedule_name(s),
            "schedule_params": sched, "seed": cfg.seed, "threads": cfg.threads}


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    sched = make_schedule(d.pop("schedule", "step"), **d.pop("schedule_params", {}))
    return TrainConfig(schedule=sched, **d)
