"""Small dense networks with hand-written reverse mode, Adam, and a gradient penalty.

A network is a chain of ``z = h @ W + b; h' = act(z)`` layers, optionally with
a residual skip ``out = x + f(x)``. ``forward`` records what ``backward`` needs
on a :class:`Tape`; a tape can be consumed once.

The gradient penalty needs the derivative of a gradient. For critics built
from affine maps and piecewise-linear activations the input gradient is a
product of weight matrices and fixed slope masks, so its parameter derivative
is another linear sweep through the same layers; ``grad_penalty`` implements
exactly that rule and refuses other activations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SeededRng, read_raw_block, write_raw_block
from .errors import DimensionMismatch, InvalidInput, MalformedFile, ShapeMismatch, StaleTape

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")
PIECEWISE_LINEAR = ("relu", "leaky_relu", "identity")


def activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    raise InvalidInput(f"unknown activation {name!r}")


def activation_slope(name, z):
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise InvalidInput(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatch(f"weight {self.weight.shape} and bias {self.bias.shape} do not fit")
        if self.activation not in ACTIVATIONS:
            raise InvalidInput(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list[Layer]
    residual: bool = False

    def __post_init__(self):
        if not self.layers:
            raise InvalidInput("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise DimensionMismatch(
                    f"layer output {prev.weight.shape[1]} does not feed input {nxt.weight.shape[0]}"
                )
        if self.residual and self.input_dim != self.output_dim:
            raise DimensionMismatch("a residual net needs input_dim == output_dim")
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise InvalidInput("network parameters must be finite")

    @classmethod
    def init(cls, sizes, activations, rng: SeededRng, residual=False, out_scale=1.0) -> "DenseNet":
        """He-style uniform init: ``W ~ U(-a, a)``, ``a = sqrt(6 / fan_in)``, zero biases.

        ``out_scale`` shrinks the last layer, which keeps a residual net near
        the identity at step zero.
        """
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise InvalidInput("need one activation per layer")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
            if i == len(sizes) - 2:
                w = w * out_scale
            layers.append(Layer(w, np.zeros(fan_out), activations[i]))
        return cls(layers, residual)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers], self.residual)

    def __call__(self, batch) -> np.ndarray:
        return forward(self, batch)


@dataclass
class Tape:
    net: DenseNet | None = None
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    recorded: bool = False


@dataclass
class Gradients:
    params: list[np.ndarray]
    input: np.ndarray


def forward(net: DenseNet, batch, tape: Tape | None = None) -> np.ndarray:
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise DimensionMismatch(f"batch shape {h.shape} does not match input_dim {net.input_dim}")
    x = h
    inputs, preacts = [], []
    for layer in net.layers:
        z = h @ layer.weight + layer.bias
        inputs.append(h)
        preacts.append(z)
        h = activate(layer.activation, z)
    if net.residual:
        h = x + h
    if tape is not None:
        tape.net, tape.inputs, tape.preacts, tape.recorded = net, inputs, preacts, True
    return h


def backward(tape: Tape, output_grad) -> Gradients:
    """Gradients of ``<output, output_grad>`` w.r.t. parameters and input."""
    if not tape.recorded:
        raise StaleTape("backward() needs a fresh forward() on this tape")
    tape.recorded = False
    net = tape.net
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != tape.preacts[-1].shape:
        raise ShapeMismatch(f"output_grad shape {g.shape} != output shape {tape.preacts[-1].shape}")
    skip = g if net.residual else None
    grads = [None] * (2 * len(net.layers))
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        u = g * activation_slope(layer.activation, tape.preacts[l])
        grads[2 * l] = tape.inputs[l].T @ u
        grads[2 * l + 1] = u.sum(axis=0)
        g = u @ layer.weight.T
    if skip is not None:
        g = g + skip
    return Gradients(grads, g)


def input_gradient(net: DenseNet, batch) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradient of a scalar-output net w.r.t. its input, plus the outputs."""
    if net.output_dim != 1:
        raise DimensionMismatch("input_gradient needs a scalar-output network")
    tape = Tape()
    out = forward(net, batch, tape)
    return backward(tape, np.ones_like(out)).input, out


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(lr, beta1, beta2, eps, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimiser state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {np.shape(g)} vs moment {m.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ------------------------------------------------------ gradient penalty


@dataclass
class PenaltyResult:
    penalty: float
    grads: list[np.ndarray]
    interpolates: np.ndarray
    mix: np.ndarray


def grad_penalty(critic: DenseNet, real, fake, rng: SeededRng | None = None, mix=None) -> PenaltyResult:
    """Mean of ``(||grad_x D(x_hat)|| - 1)**2`` at random interpolates, with its parameter gradient.

    ``x_hat = u * real + (1 - u) * fake`` with one ``u ~ U(0, 1)`` per row;
    pass ``mix`` to fix the ``u`` values instead of drawing them.
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ShapeMismatch(f"real {real.shape} and fake {fake.shape} batches differ")
    if critic.output_dim != 1:
        raise DimensionMismatch("the critic must output one score per sample")
    if critic.residual:
        raise InvalidInput("a critic cannot be residual")
    for layer in critic.layers:
        if layer.activation not in PIECEWISE_LINEAR:
            raise InvalidInput(f"gradient penalty supports {PIECEWISE_LINEAR}, not {layer.activation!r}")
    B = real.shape[0]
    if mix is None:
        mix = rng.uniform(0.0, 1.0, B)
    mix = np.asarray(mix, dtype=np.float64).reshape(B)
    xhat = mix[:, None] * real + (1.0 - mix[:, None]) * fake

    # forward, keeping slope masks
    slopes = []
    h = xhat
    for layer in critic.layers:
        z = h @ layer.weight + layer.bias
        slopes.append(activation_slope(layer.activation, z))
        h = activate(layer.activation, z)

    # input-gradient sweep: v_L = 1, u_l = v_l * s_l, v_{l-1} = u_l W_l^T
    us = [None] * len(critic.layers)
    v = np.ones((B, 1))
    for l in range(len(critic.layers) - 1, -1, -1):
        us[l] = v * slopes[l]
        v = us[l] @ critic.layers[l].weight.T
    norms = np.sqrt(np.sum(v * v, axis=1))
    penalty = float(np.mean((norms - 1.0) ** 2))

    # adjoint sweep back up through the (linear in W) input-gradient chain
    safe = np.where(norms > 0, norms, 1.0)
    r = (2.0 / B) * ((norms - 1.0) / safe)[:, None] * v
    r = np.where(norms[:, None] > 0, r, 0.0)
    grads = []
    for l, layer in enumerate(critic.layers):
        grads.append(r.T @ us[l])
        grads.append(np.zeros_like(layer.bias))
        r = (r @ layer.weight) * slopes[l]
    return PenaltyResult(penalty, grads, xhat, mix)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(nets: dict[str, DenseNet], path, extra: dict | None = None) -> None:
    """Write named networks to one file.

    Layout: u32 LE manifest length, UTF-8 JSON manifest (per net: residual
    flag and per-layer ``[in, out, activation]``), then one ``SGWE`` raw-f64
    block per weight matrix and per bias (stored as a 1 x out row), nets in
    sorted-name order.
    """
    manifest = {"version": CHECKPOINT_VERSION, "nets": {}, "extra": extra or {}}
    for name, net in nets.items():
        manifest["nets"][name] = {
            "residual": net.residual,
            "layers": [[l.weight.shape[0], l.weight.shape[1], l.activation] for l in net.layers],
        }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)) + head)
        # manifest keys are sorted, so blocks follow sorted names too
        for name in sorted(nets):
            for layer in nets[name].layers:
                write_raw_block(fh, layer.weight)
                write_raw_block(fh, layer.bias[None, :])


def load_checkpoint(path) -> tuple[dict[str, DenseNet], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise MalformedFile("truncated manifest length", path)
        (k,) = struct.unpack("<I", raw)
        try:
            manifest = json.loads(fh.read(k).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFile(f"bad manifest ({exc})", path) from None
        nets = {}
        for name, spec in manifest["nets"].items():
            layers = []
            for fan_in, fan_out, act in spec["layers"]:
                _, w = read_raw_block(fh, path)
                _, b = read_raw_block(fh, path)
                if w.shape != (fan_in, fan_out) or b.shape != (1, fan_out):
                    raise MalformedFile(f"layer blob shape mismatch in net {name!r}", path)
                layers.append(Layer(w, b[0], act))
            nets[name] = DenseNet(layers, spec["residual"])
    return nets, manifest.get("extra", {})
