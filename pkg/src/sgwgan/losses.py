"""Generator and critic objectives.

All losses are written for minimisation. Each returns a value together with
gradients: the critic loss w.r.t. critic parameters, the generator terms
w.r.t. the generator *output* (chain through the generator with
``nn.backward``), so the weighted total needs a single backward pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import SeededRng
from .errors import DimensionMismatch, InvalidInput, ShapeMismatch, SizeMismatch
from .gw_sliced import sample_basis, sgw_value_and_grad
from .nn import DenseNet, Gradients, Tape, backward, forward, grad_penalty


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator objective and the critic gradient penalty.

    ``lambda_rmse`` multiplies the mean *squared* distance ``||G(x) - x||^2``;
    despite the name no square root is taken.
    """

    lambda_rmse: float = 100.0
    lambda_sgw: float = 1000.0
    lambda_adv: float = 1.0
    gp_weight: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise InvalidInput(f"{k} must be finite and >= 0, got {v!r}")


@dataclass
class LossBreakdown:
    critic_loss: float
    gp_term: float
    rmse_term: float
    sgw_term: float
    adv_term: float
    total_generator: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"batches differ in shape: {a.shape} vs {b.shape}")
    return a, b


@dataclass
class CriticLoss:
    value: float
    base: float
    penalty: float
    grads: list[np.ndarray]


def critic_loss(critic: DenseNet, real, fake, gp_weight: float = 10.0, rng: SeededRng | None = None, mix=None) -> CriticLoss:
    """``-(mean D(real) - mean D(fake)) + gp_weight * penalty``; gradients w.r.t. the critic."""
    real, fake = _same_shape(real, fake)
    B = real.shape[0]
    tr, tf = Tape(), Tape()
    sr = forward(critic, real, tr)
    sf = forward(critic, fake, tf)
    base = float(sf.mean() - sr.mean())
    gr = backward(tr, np.full_like(sr, -1.0 / B)).params
    gf = backward(tf, np.full_like(sf, 1.0 / B)).params
    grads = [a + b for a, b in zip(gr, gf)]
    penalty = 0.0
    if gp_weight > 0:
        gp = grad_penalty(critic, real, fake, rng, mix)
        penalty = gp.penalty
        grads = [g + gp_weight * h for g, h in zip(grads, gp.grads)]
    return CriticLoss(base + gp_weight * penalty, base, penalty, grads)


def rmse_loss(gen_out, inputs):
    """Mean over rows of ``||G(x) - x||^2``; returns ``(value, d value / d gen_out)``."""
    gen_out, inputs = _same_shape(gen_out, inputs)
    diff = gen_out - inputs
    B = diff.shape[0]
    return float(np.sum(diff * diff) / B), 2.0 * diff / B


def sgw_loss(gen_out, real, rng: SeededRng, L: int, basis=None):
    """SGW^2 between a generated batch and an equal-size real batch, fresh directions per call.

    Returns ``(value, grad w.r.t. gen_out, basis)``.
    """
    gen_out = np.asarray(gen_out, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if gen_out.shape[0] != real.shape[0]:
        raise SizeMismatch(f"generated batch has {gen_out.shape[0]} rows, real batch {real.shape[0]}")
    if gen_out.shape[1] != real.shape[1]:
        raise DimensionMismatch(f"generator output dim {gen_out.shape[1]} != data dim {real.shape[1]}")
    if basis is None:
        basis = sample_basis(rng, L, real.shape[1])
    value, _, grad = sgw_value_and_grad(gen_out, real, basis)
    return value, grad, basis


def adv_loss(critic: DenseNet, gen_out):
    """``-mean D(G(x))``; gradient w.r.t. ``gen_out`` with the critic held fixed."""
    gen_out = np.asarray(gen_out, dtype=np.float64)
    if gen_out.ndim != 2 or gen_out.shape[1] != critic.input_dim:
        raise ShapeMismatch(f"generated batch {gen_out.shape} does not fit critic input {critic.input_dim}")
    tape = Tape()
    scores = forward(critic, gen_out, tape)
    B = gen_out.shape[0]
    grad = backward(tape, np.full_like(scores, -1.0 / B)).input
    return float(-scores.mean()), grad


def total_generator_loss(weights: LossWeights, rmse_term: float, sgw_term: float, adv_term: float) -> float:
    return weights.lambda_rmse * rmse_term + weights.lambda_sgw * sgw_term + weights.lambda_adv * adv_term


@dataclass
class GeneratorStep:
    rmse: float
    sgw: float
    adv: float
    total: float
    grads: Gradients
    output: np.ndarray


def generator_objective(
    gen: DenseNet,
    critic: DenseNet,
    inputs,
    real,
    weights: LossWeights,
    rng: SeededRng | None,
    L: int,
    basis=None,
) -> GeneratorStep:
    """Weighted generator objective and its gradient w.r.t. generator parameters.

    The SGW value is always computed (for logging); its gradient is skipped
    when ``lambda_sgw == 0`` so the ablated gradient is exactly the remaining terms.
    """
    tape = Tape()
    out = forward(gen, inputs, tape)
    rmse, g_rmse = rmse_loss(out, inputs)
    sgw_val, g_sgw, _ = sgw_loss(out, real, rng, L, basis)
    adv, g_adv = adv_loss(critic, out)
    grad_out = weights.lambda_rmse * g_rmse + weights.lambda_adv * g_adv
    if weights.lambda_sgw != 0:
        grad_out = grad_out + weights.lambda_sgw * g_sgw
    total = total_generator_loss(weights, rmse, sgw_val, adv)
    return GeneratorStep(rmse, sgw_val, adv, total, backward(tape, grad_out), out)
