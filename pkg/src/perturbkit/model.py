"""Dense feedforward models: evaluation, derivatives, persistence.

A model is an immutable stack of dense layers and elementwise (or
softmax) activations mapping R^M -> R^K. Everything runs in float64.
Derivatives come matrix-free as vector-Jacobian and Jacobian-vector
products; the full Jacobian can be materialized behind a size guard.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from perturbkit import backend
from perturbkit._codes import ACTIVATION_CODES, OP_ACT, OP_DENSE
from perturbkit.errors import (
    InputShapeError,
    ModelFormatError,
    SizeGuardError,
)

DEFAULT_MAX_JACOBIAN = 10_000_000
MAX_JACOBIAN_ENV = "PERTURBKIT_MAX_JACOBIAN"


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Dense:
    """Affine layer y = W x + b with W of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise ModelFormatError("dense weights must be a 2-D array")
        b = _frozen(self.bias)
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ModelFormatError(
                f"bias length {b.shape} does not match weight rows {w.shape[0]}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ModelFormatError("dense layer contains non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity (or softmax) applied to the running value."""

    tag: str

    def __post_init__(self):
        if self.tag not in ACTIVATION_CODES:
            raise ModelFormatError(
                f"unknown activation tag {self.tag!r}; "
                f"expected one of {sorted(ACTIVATION_CODES)}"
            )


Layer = Dense | Activation


class Model:
    """Immutable layer stack with cached kernel packing."""

    def __init__(self, layers, input_dim: int, output_dim: int):
        layers = tuple(layers)
        cur = int(input_dim)
        for i, layer in enumerate(layers):
            if isinstance(layer, Dense):
                if layer.in_dim != cur:
                    raise ModelFormatError(
                        f"layer {i}: expected input dim {cur}, got {layer.in_dim}"
                    )
                cur = layer.out_dim
            elif not isinstance(layer, Activation):
                raise ModelFormatError(f"layer {i}: unsupported layer object {layer!r}")
        if cur != int(output_dim):
            raise ModelFormatError(
                f"declared output dim {output_dim} but layers produce {cur}"
            )
        self.layers = layers
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self._pack()

    def _pack(self):
        ws, bs, kinds, args = [], [], [], []
        for layer in self.layers:
            if isinstance(layer, Dense):
                kinds.append(OP_DENSE)
                args.append(len(ws))
                ws.append(layer.weights)
                bs.append(layer.bias)
            else:
                kinds.append(OP_ACT)
                args.append(ACTIVATION_CODES[layer.tag])
        self._ws = ws
        self._bs = bs
        self._op_kind = np.asarray(kinds, dtype=np.int32)
        self._op_arg = np.asarray(args, dtype=np.int32)

    @property
    def has_softmax_output(self) -> bool:
        return bool(self.layers) and (
            isinstance(self.layers[-1], Activation) and self.layers[-1].tag == "softmax"
        )

    def __repr__(self):
        shape = "-".join(
            [str(self.input_dim)]
            + [str(l.out_dim) for l in self.layers if isinstance(l, Dense)]
        )
        return f"Model({shape}, {len(self.layers)} layers)"


def linear_model(weights, bias=None) -> Model:
    """Single dense layer; handy for exactly-linear fixtures."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.zeros(w.shape[0]) if bias is None else bias
    return Model([Dense(w, b)], w.shape[1], w.shape[0])


def identity_model(dim: int) -> Model:
    return linear_model(np.eye(dim))


def _check_vec(v, length: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != length:
        raise InputShapeError(
            f"{name} must be a 1-D array of length {length}, got shape {arr.shape}"
        )
    return arr


def forward(model: Model, x) -> np.ndarray:
    """Evaluate f(x)."""
    x = _check_vec(x, model.input_dim, "x")
    return backend.active().forward(model._ws, model._bs, model._op_kind, model._op_arg, x)


def vjp(model: Model, x, u) -> np.ndarray:
    """J_f(x)^T u without materializing the Jacobian."""
    x = _check_vec(x, model.input_dim, "x")
    u = _check_vec(u, model.output_dim, "u")
    return backend.active().vjp(model._ws, model._bs, model._op_kind, model._op_arg, x, u)


def jvp(model: Model, x, v) -> np.ndarray:
    """J_f(x) v without materializing the Jacobian."""
    x = _check_vec(x, model.input_dim, "x")
    v = _check_vec(v, model.input_dim, "v")
    return backend.active().jvp(model._ws, model._bs, model._op_kind, model._op_arg, x, v)


def max_jacobian_elems() -> int:
    raw = os.environ.get(MAX_JACOBIAN_ENV)
    if raw:
        return int(raw)
    return DEFAULT_MAX_JACOBIAN


def jacobian(model: Model, x, max_elems: int | None = None) -> np.ndarray:
    """Materialize the (K, M) Jacobian row by row.

    Refuses when M*K exceeds the guard (argument, else the
    PERTURBKIT_MAX_JACOBIAN env var, else 10^7): use vjp/jvp instead.
    """
    limit = max_jacobian_elems() if max_elems is None else int(max_elems)
    m, k = model.input_dim, model.output_dim
    if m * k > limit:
        raise SizeGuardError(
            f"Jacobian would hold {m * k} elements (> guard {limit}); "
            "use the matrix-free vjp/jvp path"
        )
    x = _check_vec(x, m, "x")
    rows = np.empty((k, m))
    e = np.zeros(k)
    for r in range(k):
        e[r] = 1.0
        rows[r] = vjp(model, x, e)
        e[r] = 0.0
    return rows


def predict(model: Model, x) -> int:
    """argmax class; ties resolve to the lowest index."""
    return int(np.argmax(forward(model, x)))


def relu_preactivation_margin(model: Model, x) -> float:
    """Smallest |pre-activation| feeding any relu stage (inf if none).

    Small values mean x sits near a kink where f is not differentiable.
    """
    from perturbkit import _purepy  # diagnostics always use the plain walker

    x = _check_vec(x, model.input_dim, "x")
    vals = _purepy.forward_stages(model._ws, model._bs, model._op_kind, model._op_arg, x)
    margin = np.inf
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Activation) and layer.tag == "relu":
            z = vals[i]
            if z.size:
                margin = min(margin, float(np.min(np.abs(z))))
    return margin


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            layers.append(
                {
                    "kind": "dense",
                    "in": layer.in_dim,
                    "out": layer.out_dim,
                    "weights": [float(v) for v in layer.weights.ravel()],
                    "bias": [float(v) for v in layer.bias],
                }
            )
        else:
            layers.append({"kind": "activation", "tag": layer.tag})
    return {
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": layers,
    }


def model_from_dict(obj: dict) -> Model:
    try:
        input_dim = int(obj["input_dim"])
        output_dim = int(obj["output_dim"])
        raw_layers = obj["layers"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"model object missing required field: {exc}") from exc
    layers = []
    for i, entry in enumerate(raw_layers):
        kind = entry.get("kind")
        if kind == "dense":
            n_in, n_out = int(entry["in"]), int(entry["out"])
            w = np.asarray(entry["weights"], dtype=np.float64)
            if w.size != n_in * n_out:
                raise ModelFormatError(
                    f"layer {i}: {w.size} weights cannot fill a "
                    f"({n_out}, {n_in}) matrix"
                )
            layers.append(Dense(w.reshape(n_out, n_in), np.asarray(entry["bias"])))
        elif kind == "activation":
            layers.append(Activation(str(entry.get("tag"))))
        else:
            raise ModelFormatError(f"layer {i}: unknown kind {kind!r}")
    return Model(layers, input_dim, output_dim)


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(obj)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Example:
    x: np.ndarray
    label: int | None = None
    target: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=np.float64)
        if self.label is not None:
            self.label = int(self.label)


@dataclass
class Dataset:
    examples: list[Example] = field(default_factory=list)

    def __post_init__(self):
        if self.examples:
            m = self.examples[0].x.shape[0]
            for i, ex in enumerate(self.examples):
                if ex.x.shape != (m,):
                    raise ModelFormatError(
                        f"example {i}: x has shape {ex.x.shape}, expected ({m},)"
                    )

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def input_dim(self) -> int:
        if not self.examples:
            raise ModelFormatError("empty dataset has no input dimension")
        return self.examples[0].x.shape[0]

    @property
    def has_labels(self) -> bool:
        return bool(self.examples) and all(ex.label is not None for ex in self.examples)

    @property
    def has_targets(self) -> bool:
        return bool(self.examples) and all(ex.target is not None for ex in self.examples)


def dataset_to_dict(dataset: Dataset) -> dict:
    out = []
    for ex in dataset.examples:
        entry: dict = {"x": [float(v) for v in ex.x]}
        if ex.label is not None:
            entry["label"] = ex.label
        if ex.target is not None:
            entry["target"] = [float(v) for v in ex.target]
        out.append(entry)
    return {"examples": out}


def dataset_from_dict(obj: dict) -> Dataset:
    try:
        raw = obj["examples"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError("dataset object must hold an 'examples' list") from exc
    examples = []
    for i, entry in enumerate(raw):
        if "x" not in entry:
            raise ModelFormatError(f"example {i}: missing 'x'")
        examples.append(
            Example(
                np.asarray(entry["x"], dtype=np.float64),
                label=entry.get("label"),
                target=None
                if entry.get("target") is None
                else np.asarray(entry["target"], dtype=np.float64),
            )
        )
    return Dataset(examples)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(dataset), fh)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_dict(obj)


# ---------------------------------------------------------------------------
# Derivative self-check
# ---------------------------------------------------------------------------


@dataclass
class DerivativeCheckReport:
    max_rel_error_jvp: float
    max_rel_error_vjp: float
    tol: float
    passed: bool
    at_kink: bool
    min_relu_preactivation: float
    n_probes: int

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_error_jvp, self.max_rel_error_vjp)


def finite_diff_check(
    model: Model,
    x,
    tol: float = 1e-4,
    n_probes: int = 5,
    h: float = 1e-5,
    seed: int = 0,
    kink_band: float = 1e-3,
) -> DerivativeCheckReport:
    """Compare analytic jvp/vjp against central differences at x.

    Points whose relu pre-activations come within `kink_band` of zero are
    flagged (`at_kink`); derivative comparisons are unreliable there and
    callers should exclude them.
    """
    x = _check_vec(x, model.input_dim, "x")
    rng = np.random.default_rng(seed)
    err_jvp = 0.0
    err_vjp = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(model.input_dim)
        v /= np.linalg.norm(v)
        u = rng.standard_normal(model.output_dim)
        u /= np.linalg.norm(u)
        fd = (forward(model, x + h * v) - forward(model, x - h * v)) / (2.0 * h)
        ana = jvp(model, x, v)
        denom = max(np.linalg.norm(fd), np.linalg.norm(ana), 1e-12)
        err_jvp = max(err_jvp, float(np.linalg.norm(ana - fd) / denom))
        lhs = float(u @ fd)
        rhs = float(vjp(model, x, u) @ v)
        err_vjp = max(err_vjp, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12))
    margin = relu_preactivation_margin(model, x)
    at_kink = margin < kink_band
    worst = max(err_jvp, err_vjp)
    return DerivativeCheckReport(
        max_rel_error_jvp=err_jvp,
        max_rel_error_vjp=err_vjp,
        tol=tol,
        passed=worst <= tol,
        at_kink=at_kink,
        min_relu_preactivation=margin,
        n_probes=n_probes,
    )
