"""Small deterministic classifiers trained with plain mini-batch SGD.

Two architectures: multinomial logistic regression (``linear``) and ReLU
multilayer perceptrons (``mlp``).  Training is a pure function of
``(spec, data)``: initialisation and every epoch's shuffle come from
streams derived from ``spec.seed``, so the weights after epoch ``k`` do not
depend on how many epochs follow.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .datagen import DatasetTable, RatioTransformer, apply_ratio
from .errors import DimensionMismatch, DistInfError, NonFiniteLoss, SingleClassData

LINEAR = "linear"
MLP = "mlp"
N_CLASSES = 2


@dataclass(frozen=True)
class ModelSpec:
    arch: str = LINEAR
    hidden_sizes: tuple[int, ...] = ()
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    l2_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.arch not in (LINEAR, MLP):
            raise DistInfError(f"unknown architecture {self.arch!r}")
        if self.arch == MLP and not self.hidden_sizes:
            raise DistInfError("an MLP needs at least one hidden layer")
        if self.arch == LINEAR and self.hidden_sizes:
            raise DistInfError("a linear model has no hidden layers")
        if any(h < 1 for h in self.hidden_sizes):
            raise DistInfError("hidden sizes must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise DistInfError("epochs and batch_size must be positive")
        if not self.learning_rate > 0 or self.l2_penalty < 0:
            raise DistInfError("learning_rate must be positive and l2_penalty non-negative")

    @classmethod
    def linear(cls, **kw) -> "ModelSpec":
        return cls(arch=LINEAR, **kw)

    @classmethod
    def mlp(cls, hidden_sizes: Sequence[int] = (32,), **kw) -> "ModelSpec":
        return cls(arch=MLP, hidden_sizes=tuple(hidden_sizes), **kw)

    def layer_sizes(self, input_dim: int) -> list[int]:
        return [input_dim, *self.hidden_sizes, N_CLASSES]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{**d, "hidden_sizes": tuple(d.get("hidden_sizes", ()))})


Params = list  # [(W, b), ...] per layer, W has shape (fan_in, fan_out)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: ModelSpec
    layers: tuple
    training_epochs_completed: int
    train_accuracy: float

    def __post_init__(self):
        layers = []
        for w, b in self.layers:
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DistInfError("malformed layer shapes")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteLoss("non-finite weights", epoch=self.training_epochs_completed)
            w.setflags(write=False)
            b.setflags(write=False)
            layers.append((w, b))
        for (w0, _), (w1, _) in zip(layers, layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise DistInfError("adjacent layers do not chain")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for w, b in self.layers:
            out.extend([w.shape, b.shape])
        return out

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in self.layers for a in wb])

    def equals(self, other: "TrainedModel") -> bool:
        return (
            self.spec == other.spec
            and self.shapes == other.shapes
            and self.flat_weights().tobytes() == other.flat_weights().tobytes()
            and self.training_epochs_completed == other.training_epochs_completed
        )

    # persistence -------------------------------------------------------

    def _header(self) -> dict:
        return {
            "format": "distinf-model",
            "version": 1,
            "spec": self.spec.to_dict(),
            "shapes": [list(s) for s in self.shapes],
            "training_epochs_completed": self.training_epochs_completed,
            "train_accuracy": self.train_accuracy,
        }

    def to_json(self) -> str:
        h = self._header()
        h["weights"] = [float(v) for v in self.flat_weights()]
        return json.dumps(h, sort_keys=True)

    def to_bytes(self) -> bytes:
        header = json.dumps(self._header(), sort_keys=True).encode("utf-8")
        return b"DINF" + struct.pack("<HI", 1, len(header)) + header + self.flat_weights().astype("<f8").tobytes()

    @classmethod
    def _from_parts(cls, header: dict, flat: np.ndarray) -> "TrainedModel":
        if header.get("format") != "distinf-model" or header.get("version") != 1:
            raise DistInfError("unrecognised model dump")
        shapes = [tuple(s) for s in header["shapes"]]
        expected = sum(int(np.prod(s)) for s in shapes)
        if flat.size != expected:
            raise DistInfError(f"weight vector has {flat.size} entries, shapes need {expected}")
        arrays, pos = [], 0
        for s in shapes:
            k = int(np.prod(s))
            arrays.append(flat[pos : pos + k].reshape(s))
            pos += k
        layers = tuple(zip(arrays[0::2], arrays[1::2]))
        return cls(
            ModelSpec.from_dict(header["spec"]),
            layers,
            int(header["training_epochs_completed"]),
            float(header["train_accuracy"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        h = json.loads(text)
        return cls._from_parts(h, np.asarray(h.pop("weights"), dtype=np.float64))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TrainedModel":
        if blob[:4] != b"DINF":
            raise DistInfError("not a binary model dump")
        version, hlen = struct.unpack("<HI", blob[4:10])
        if version != 1:
            raise DistInfError(f"unsupported dump version {version}")
        header = json.loads(blob[10 : 10 + hlen].decode("utf-8"))
        flat = np.frombuffer(blob[10 + hlen :], dtype="<f8").astype(np.float64)
        return cls._from_parts(header, flat)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(self.to_json(), encoding="utf-8")
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_json(path.read_text(encoding="utf-8"))
        return cls.from_bytes(path.read_bytes())


# numerics --------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_params(sizes: Sequence[int], seed: int) -> Params:
    gen = seeding.rng(seed, "init")
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append((gen.uniform(-bound, bound, (fan_in, fan_out)), gen.uniform(-bound, bound, fan_out)))
    return params


def forward(params: Params, x: np.ndarray) -> np.ndarray:
    h = x
    for w, b in params[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = params[-1]
    return softmax(h @ w + b)


def loss_and_grad(params: Params, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy plus ``0.5 * l2 * sum(W**2)`` over weight matrices.

    Returns ``(loss, grads)`` with grads shaped like ``params``.
    """
    acts = [x]
    h = x
    for w, b in params[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    w, b = params[-1]
    probs = softmax(h @ w + b)
    n = x.shape[0]
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
    if l2:
        loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w, _ in params)

    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        a = acts[i]
        gw = a.T @ delta
        if l2:
            gw = gw + l2 * w
        grads[i] = (gw, delta.sum(axis=0))
        if i:
            delta = (delta @ w.T) * (a > 0)
    return float(loss), grads


def _check_data(spec: ModelSpec, data: DatasetTable) -> None:
    if data.n < 1:
        raise DistInfError("cannot train on an empty table")
    if np.unique(data.task_labels).size < 2:
        raise SingleClassData("training data must contain both task labels")


def _snapshot(spec: ModelSpec, params: Params, epoch: int, data: DatasetTable) -> TrainedModel:
    layers = tuple((w.copy(), b.copy()) for w, b in params)
    acc = float(np.mean(np.argmax(forward(params, data.features), axis=1) == data.task_labels))
    return TrainedModel(spec, layers, epoch, acc)


def train_with_checkpoints(spec: ModelSpec, data: DatasetTable, checkpoint_epochs: Sequence[int]) -> list[TrainedModel]:
    checkpoints = [int(e) for e in checkpoint_epochs]
    if not checkpoints:
        raise DistInfError("at least one checkpoint is required")
    if checkpoints != sorted(checkpoints) or checkpoints[0] < 1 or checkpoints[-1] > spec.epochs:
        raise DistInfError(f"checkpoints must be sorted within [1, {spec.epochs}], got {checkpoints}")
    _check_data(spec, data)
    x, y = data.features, data.task_labels
    n = data.n
    params = init_params(spec.layer_sizes(data.feature_dim), spec.seed)
    out = []
    pending = list(checkpoints)
    for epoch in range(1, checkpoints[-1] + 1):
        order = seeding.rng(spec.seed, "shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            loss, grads = loss_and_grad(params, x[idx], y[idx], spec.l2_penalty)
            epoch_loss += loss
            params = [(w - spec.learning_rate * gw, b - spec.learning_rate * gb) for (w, b), (gw, gb) in zip(params, grads)]
        if not np.isfinite(epoch_loss) or not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in params):
            raise NonFiniteLoss(f"training diverged in epoch {epoch}", epoch=epoch)
        while pending and pending[0] == epoch:
            out.append(_snapshot(spec, params, epoch, data))
            pending.pop(0)
    return out


def train(spec: ModelSpec, data: DatasetTable) -> TrainedModel:
    return train_with_checkpoints(spec, data, [spec.epochs])[0]


def _check_width(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim} features, got shape {x.shape}")
    return x


def predict_proba(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix of shape (n, 2); rows sum to one."""
    return forward(list(model.layers), _check_width(model, features))


def predict_labels(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to class 0
    return np.argmax(predict_proba(model, features), axis=1).astype(np.int64)


def accuracy(model: TrainedModel, data: DatasetTable) -> float:
    return float(np.mean(predict_labels(model, data.features) == data.task_labels))


def zero_model(input_dim: int, spec: ModelSpec | None = None) -> TrainedModel:
    """A model with all-zero weights; predicts the uniform distribution."""
    spec = spec or ModelSpec()
    sizes = spec.layer_sizes(input_dim)
    layers = tuple((np.zeros((a, b)), np.zeros(b)) for a, b in zip(sizes, sizes[1:]))
    return TrainedModel(spec, layers, 0, 0.0)


# fleets ----------------------------------------------------------------

Prepare = Callable[[DatasetTable, int], DatasetTable]


def fleet_member_seeds(master_seed: int, index: int) -> tuple[int, int, int]:
    """(sampling seed, preparation seed, training seed) for fleet member ``index``."""
    sub = seeding.derive(master_seed, "fleet", index)
    return seeding.derive(sub, "sample"), seeding.derive(sub, "prepare"), seeding.derive(sub, "train")


def _train_member(
    index: int,
    spec_template: ModelSpec,
    pool: DatasetTable,
    t: RatioTransformer,
    master_seed: int,
    prepare: Prepare | None,
    checkpoints: tuple[int, ...] | None,
):
    s_sample, s_prep, s_train = fleet_member_seeds(master_seed, index)
    try:
        data = apply_ratio(pool, t, s_sample)
        if prepare is not None:
            data = prepare(data, s_prep)
        spec = replace(spec_template, seed=s_train)
        if checkpoints is None:
            return train(spec, data)
        return train_with_checkpoints(spec, data, checkpoints)
    except DistInfError as exc:
        raise type(exc)(f"fleet model {index}: {exc}") from exc


def parallel_map(fn, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map; ``jobs > 1`` uses worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def train_fleet(
    spec_template: ModelSpec,
    pool: DatasetTable,
    t: RatioTransformer,
    count: int,
    master_seed: int,
    prepare: Prepare | None = None,
    jobs: int = 1,
    checkpoints: Sequence[int] | None = None,
) -> list:
    """Train ``count`` models, each on a fresh ``apply_ratio`` draw from ``pool``.

    ``prepare`` (e.g. a defense) is applied to each sampled table before
    training.  With ``checkpoints`` each entry is a list of snapshots.
    """
    if count < 1:
        raise DistInfError("fleet size must be at least 1")
    fn = partial(
        _train_member,
        spec_template=spec_template,
        pool=pool,
        t=t,
        master_seed=master_seed,
        prepare=prepare,
        checkpoints=None if checkpoints is None else tuple(checkpoints),
    )
    return parallel_map(fn, list(range(count)), jobs)
