"""Small dense networks with hand-written backward passes.

Every network in the package (denoiser, feature encoder, downstream
classifier) is a :class:`DenseNet`. Forward passes return an explicit
activation tape, and :func:`net_backward` replays it to produce exact
parameter and input gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("silu", "identity")
FINAL_ACTIVATIONS = ("identity", "softmax")
CHECKPOINT_MAGIC = "dmsynth-ckpt"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised on dimension mismatches and invalid network specs."""


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "silu"
    final_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.layer_dims
        if any(int(d) < 1 for d in dims):
            raise ShapeError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ShapeError(f"unknown final activation {self.final_activation!r}")
        if self.final_activation == "softmax" and self.output_dim < 2:
            raise ShapeError("softmax head needs output_dim >= 2")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "final_activation": self.final_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            activation=d.get("activation", "silu"),
            final_activation=d.get("final_activation", "identity"),
        )


@dataclass
class DenseNet:
    """Feedforward network. ``weights[k]`` has shape (fan_in, fan_out)."""

    spec: NetSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None
    version: int = 0

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("layer count does not match the NetSpec")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ShapeError(
                    f"layer {k}: expected W{(dims[k], dims[k + 1])} b{(dims[k + 1],)}, "
                    f"got W{w.shape} b{b.shape}"
                )

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_names(self) -> list[str]:
        names = []
        for k in range(self.num_layers):
            names.extend((f"layer {k} weight", f"layer {k} bias"))
        return names

    def copy(self) -> "DenseNet":
        return DenseNet(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            seed=self.seed,
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return net_forward(self, x)[0]


@dataclass
class Tape:
    """Activation record of one forward call."""

    net_id: int
    net_version: int
    squeeze: bool
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    sig: list[np.ndarray | None]  # cached sigmoid of hidden pre-activations
    output: np.ndarray


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def net_init(spec: NetSpec, seed: int, zero: bool = False) -> DenseNet:
    """Fan-in scaled normal weights, zero biases.

    ``zero=True`` forces every parameter to zero (test hook).
    """
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return DenseNet(spec, weights, biases, seed=seed)


def _act(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Activation value and its cached sigmoid (None for identity)."""
    if name == "silu":
        s = expit(z)
        return z * s, s
    return z, None


def _act_grad(z: np.ndarray, s: np.ndarray | None) -> np.ndarray | float:
    if s is None:
        return 1.0
    return s * (1.0 + z * (1.0 - s))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def net_forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ShapeError(f"expected input of width {net.spec.input_dim}, got shape {x.shape}")
    inputs, pre, sig = [], [], []
    h = x
    last = net.num_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if k < last:
            h, s = _act(net.spec.activation, z)
            sig.append(s)
        else:
            h = z
    if net.spec.final_activation == "softmax":
        h = softmax(h)
    tape = Tape(id(net), net.version, squeeze, inputs, pre, sig, h)
    return (h[0] if squeeze else h), tape


def net_backward(
    net: DenseNet, tape: Tape, output_grad: np.ndarray, through_head: bool = True
) -> ParamGrads:
    """Gradients of a scalar loss given its gradient w.r.t. the network output.

    With a softmax head and ``through_head=False``, ``output_grad`` is taken
    to be the gradient w.r.t. the logits (pre-softmax), which is the stable
    route for cross-entropy.
    """
    if tape.net_id != id(net) or tape.net_version != net.version:
        raise ValueError("tape does not belong to the current state of this network")
    g = np.asarray(output_grad, dtype=float)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {tape.output.shape}")
    if net.spec.final_activation == "softmax" and through_head:
        p = tape.output
        g = p * (g - (g * p).sum(axis=1, keepdims=True))
    dws = [None] * net.num_layers
    dbs = [None] * net.num_layers
    last = net.num_layers - 1
    for k in range(last, -1, -1):
        if k < last:
            g = g * _act_grad(tape.pre[k], tape.sig[k])
        dws[k] = tape.inputs[k].T @ g
        dbs[k] = g.sum(axis=0)
        g = g @ net.weights[k].T
    return ParamGrads(dws, dbs, g[0] if tape.squeeze else g)


@dataclass
class OptimizerState:
    """Adaptive-moment (or plain SGD) state for a list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"


def optimizer_init(
    params: Sequence[np.ndarray], lr: float = 1e-3, kind: str = "adam",
    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
) -> OptimizerState:
    if kind not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {kind!r}")
    return OptimizerState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, kind=kind,
    )


def apply_update(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    names: Sequence[str] | None = None,
) -> None:
    """In-place update of ``params``; increments ``state.step``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter/gradient/state lists differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"parameter {i}"
            raise FloatingPointError(f"non-finite gradient in {label}")
    state.step += 1
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= state.lr * g
        return
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def optimizer_step(net: DenseNet, grads: ParamGrads, state: OptimizerState) -> None:
    """Apply one update to ``net`` in place and invalidate outstanding tapes."""
    apply_update(net.params(), grads.as_list(), state, net.param_names())
    net.version += 1


def time_embedding(t, dim: int, T: int) -> np.ndarray:
    """Sinusoidal timestep features; ``t`` may be an int or an int array."""
    if dim < 2 or dim % 2:
        raise ValueError(f"time embedding dim must be even and positive, got {dim}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > T):
        raise ValueError(f"timestep out of range [1, {T}]")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t_arr.astype(float)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


# --- checkpoints -----------------------------------------------------------
#
# Layout: one line of JSON (header) terminated by "\n", then the raw
# little-endian float32 payload. Nets contribute W0, b0, W1, b1, ... in that
# order; named arrays follow in header order.


def _to_f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(
    path: str | Path,
    nets: dict[str, DenseNet] | None = None,
    arrays: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> None:
    nets = nets or {}
    arrays = arrays or {}
    entries, chunks = [], []
    for name, net in nets.items():
        entries.append({
            "name": name,
            "kind": "net",
            "spec": net.spec.to_dict(),
            "seed": net.seed,
            "shapes": [list(p.shape) for p in net.params()],
        })
        chunks.extend(_to_f32(p) for p in net.params())
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        entries.append({"name": name, "kind": "array", "shapes": [list(arr.shape)]})
        chunks.append(_to_f32(arr))
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f4",
        "entries": entries,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    Path(path).write_bytes(blob + b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a dmsynth checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = nl + 1
    nets, arrays = {}, {}

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated payload")
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(float)
        offset += nbytes
        return a.reshape(shape)

    for e in header["entries"]:
        if e["kind"] == "net":
            spec = NetSpec.from_dict(e["spec"])
            params = [take(tuple(s)) for s in e["shapes"]]
            nets[e["name"]] = DenseNet(spec, params[0::2], params[1::2], seed=e.get("seed"))
        else:
            arrays[e["name"]] = take(tuple(e["shapes"][0]))
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return nets, arrays, header["meta"]


def round_to_f32(net: DenseNet) -> DenseNet:
    """Round parameters to float32 precision, matching what a checkpoint stores."""
    for p in net.params():
        p[...] = p.astype(np.float32)
    net.version += 1
    return net


__all__ = [
    "NetSpec", "DenseNet", "Tape", "ParamGrads", "OptimizerState", "ShapeError",
    "net_init", "net_forward", "net_backward", "softmax",
    "optimizer_init", "optimizer_step", "apply_update", "time_embedding",
    "save_checkpoint", "load_checkpoint", "round_to_f32",
]
