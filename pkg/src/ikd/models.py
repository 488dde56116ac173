"""Teacher/student classifiers and the plain SGD update shared by both."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ikd import engine
from ikd.engine import Tensor
from ikd.errors import ConfigError, ShapeError, StateError

ARCHITECTURES = ("linear", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "tanh"
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.input_dim <= 0 or self.num_classes <= 0:
            raise ConfigError(f"dims must be positive: d={self.input_dim}, C={self.num_classes}")
        if self.architecture == "mlp" and self.hidden_dim <= 0:
            raise ConfigError(f"mlp needs a positive hidden_dim, got {self.hidden_dim}")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")

    @property
    def capacity(self):
        """Width of the representation fed to the classifier head."""
        return self.hidden_dim if self.architecture == "mlp" else 0


class ParamSet:
    """Ordered name -> Tensor map for one model. Iteration order is insertion order."""

    def __init__(self, spec: ModelSpec, params: dict, role="student"):
        if role not in ("teacher", "student"):
            raise ConfigError(f"role must be teacher or student, got {role!r}")
        self.spec = spec
        self.role = role
        self.params = dict(params)
        for name, t in self.params.items():
            t.requires_grad = True
            t.name = name

    def __iter__(self):
        return iter(self.params.values())

    def __getitem__(self, name):
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self):
        return list(self.params)

    def num_params(self):
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def flat(self):
        return np.concatenate([t.values.ravel() for t in self.params.values()])

    def flat_grad(self):
        return np.concatenate(
            [(np.zeros(t.size) if t.grad is None else t.grad.ravel()) for t in self.params.values()]
        )

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params():
            raise ShapeError(f"flat vector of size {vec.size} for {self.num_params()} params")
        i = 0
        for t in self.params.values():
            t.values = vec[i : i + t.size].reshape(t.shape).copy()
            i += t.size

    def copy(self, role=None):
        return ParamSet(
            self.spec,
            {n: Tensor(t.values.copy()) for n, t in self.params.items()},
            role=role or self.role,
        )

    def snapshot(self):
        return {n: t.values.copy() for n, t in self.params.items()}

    def to_json(self):
        return {n: {"shape": list(t.shape), "values": t.values.ravel().tolist()} for n, t in self.params.items()}


def init(spec: ModelSpec, role="student") -> ParamSet:
    """Weights ~ U(-init_scale, init_scale) from a generator seeded by ``spec.seed``; biases zero."""
    rng = np.random.default_rng(spec.seed)
    s = spec.init_scale

    def w(rows, cols):
        return Tensor(rng.uniform(-s, s, size=(rows, cols)))

    if spec.architecture == "linear":
        params = {"W": w(spec.input_dim, spec.num_classes), "b": Tensor(np.zeros(spec.num_classes))}
    else:
        params = {
            "W1": w(spec.input_dim, spec.hidden_dim),
            "b1": Tensor(np.zeros(spec.hidden_dim)),
            "W2": w(spec.hidden_dim, spec.num_classes),
            "b2": Tensor(np.zeros(spec.num_classes)),
        }
    return ParamSet(spec, params, role=role)


def representation(params: ParamSet, x) -> Tensor:
    """Penultimate activation fed to the classifier head (the input itself for linear models)."""
    x = engine.as_tensor(x)
    d = params.spec.input_dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ShapeError(f"forward: input shape {x.shape} does not match input_dim {d}")
    if params.spec.architecture == "linear":
        return x
    return engine.tanh(x @ params["W1"] + params["b1"])


def forward(params: ParamSet, x) -> Tensor:
    """Logits ``h @ W + b`` on the graph."""
    h = representation(params, x)
    if params.spec.architecture == "linear":
        return h @ params["W"] + params["b"]
    return h @ params["W2"] + params["b2"]


def predict(params: ParamSet, x) -> np.ndarray:
    return forward(params, x).values.argmax(axis=1)


def accuracy(params: ParamSet, x, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float((predict(params, x) == labels).mean())


def sgd_step(params: ParamSet, lr: float) -> None:
    """In-place ``p <- p - lr * grad`` followed by clearing every gradient slot."""
    missing = [n for n, t in params.items() if t.grad is None]
    if missing:
        raise StateError(f"sgd_step: no gradient for parameter {missing[0]!r}")
    for t in params:
        t.values = t.values - lr * t.grad
        t.grad = None


PARAMS_SCHEMA = "ikd.params/1"


def save_params(params: ParamSet, path) -> None:
    doc = {"schema": PARAMS_SCHEMA, "role": params.role, "params": params.to_json()}
    Path(path).write_text(json.dumps(doc))


def load_params(path, spec: ModelSpec, role="student") -> ParamSet:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or doc.get("schema") != PARAMS_SCHEMA:
        raise ShapeError(f"{path}: not a {PARAMS_SCHEMA} parameter file")
    raw = doc["params"]
    template = init(spec, role=role)
    if list(raw) != template.names():
        raise ShapeError(f"parameter names {list(raw)} do not match {template.names()}")
    tensors = {}
    for name, entry in raw.items():
        shape = tuple(entry["shape"])
        if shape != template[name].shape:
            raise ShapeError(f"{name}: stored shape {shape} != expected {template[name].shape}")
        tensors[name] = Tensor(np.array(entry["values"], dtype=np.float64).reshape(shape))
    return ParamSet(spec, tensors, role=role)
