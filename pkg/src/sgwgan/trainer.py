"""Alternating critic/generator training on synthetic labelled point clouds.

The synthetic task: the high-quality domain is ``K`` Gaussian clusters in
R^d; the low-quality domain is the same points pushed through a fixed
invertible, anisotropically contracting linear map plus Gaussian noise. A
generator maps low to high; the relational (SGW) term is what lets it
restore intra-class distances.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from sklearn.metrics import silhouette_score

from .core import EmbeddingSet, SeededRng, pairwise_distances, split_by_label
from .errors import InvalidInput, InvalidSpec, MalformedFile, NonFiniteLoss
from .gw_exact import default_epsilon, gw_entropic
from .gw_sliced import sample_basis, sgw_fast
from .losses import LossBreakdown, LossWeights, critic_loss, generator_objective
from .nn import AdamState, DenseNet, Layer, adam_step, forward, load_checkpoint, save_checkpoint

REPORT_VERSION = 1
STEP_FIELDS = ("step", "epoch", "critic_loss", "gp_term", "rmse_term", "sgw_term", "adv_term", "total_generator")


# ------------------------------------------------------------------ data


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 3
    dim: int = 8
    per_class: int = 300
    separation: float = 4.0
    contraction: float = 0.35  # smallest singular value of the degradation map
    noise: float = 0.25
    identity_degradation: bool = False
    seed: int = 0

    def validate(self, batch_size: int = 2):
        if self.n_classes < 2:
            raise InvalidSpec(f"n_classes must be >= 2, got {self.n_classes}")
        if self.dim < 2:
            raise InvalidSpec(f"dim must be >= 2, got {self.dim}")
        if self.per_class < batch_size:
            raise InvalidSpec(f"per_class ({self.per_class}) must be >= batch size ({batch_size})")
        if not 0 < self.contraction <= 1:
            raise InvalidSpec(f"contraction must be in (0, 1], got {self.contraction}")
        if self.noise < 0 or self.separation < 0:
            raise InvalidSpec("noise and separation must be >= 0")


@dataclass
class SyntheticDataset:
    low: EmbeddingSet
    high: EmbeddingSet
    means: np.ndarray
    covariance_factors: np.ndarray
    degradation: np.ndarray  # low = high @ degradation.T + noise
    spec: DatasetSpec


def _random_rotation(rng: SeededRng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((d, d)))
    return q * np.sign(np.diag(r))


def make_synthetic(spec: DatasetSpec, batch_size: int = 2) -> SyntheticDataset:
    spec.validate(batch_size)
    rng = SeededRng(spec.seed)
    K, d, n = spec.n_classes, spec.dim, spec.per_class
    means = rng.normal((K, d))
    means *= spec.separation / np.linalg.norm(means, axis=1, keepdims=True)
    means -= means.mean(axis=0)
    factors = np.empty((K, d, d))
    for k in range(K):
        scales = rng.uniform(0.4, 1.2, d)
        factors[k] = _random_rotation(rng, d) * scales[None, :]
    high = np.concatenate([means[k] + rng.normal((n, d)) @ factors[k].T for k in range(K)])
    labels = [f"c{k}" for k in range(K) for _ in range(n)]
    if spec.identity_degradation:
        A = np.eye(d)
    else:
        sv = np.linspace(spec.contraction, 1.0, d)
        A = _random_rotation(rng, d) @ np.diag(sv) @ _random_rotation(rng, d).T
    low = high @ A.T
    if spec.noise > 0:
        low = low + spec.noise * rng.normal(low.shape)
    return SyntheticDataset(EmbeddingSet(low, labels), EmbeddingSet(high, labels), means, factors, A, spec)


def inverse_degradation_net(dataset: SyntheticDataset) -> DenseNet:
    """Single linear layer undoing the degradation map (exact when noise is zero)."""
    inv = np.linalg.inv(dataset.degradation)
    return DenseNet([Layer(inv.T, np.zeros(dataset.spec.dim), "identity")])


def identity_net(d: int) -> DenseNet:
    return DenseNet([Layer(np.eye(d), np.zeros(d), "identity")])


def class_separation(points, labels) -> float:
    """Silhouette score of ``points`` under ``labels`` (Euclidean)."""
    return float(silhouette_score(np.asarray(points), np.asarray(labels), metric="euclidean"))


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    steps_per_epoch: int = 50  # 0: one pass over the low-quality set per epoch
    batch_size: int = 16
    critic_steps: int = 5
    lr_generator: float = 1e-3
    lr_critic: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_rmse: float = 100.0
    lambda_sgw: float = 1000.0
    lambda_adv: float = 1.0
    gp_weight: float = 10.0
    projections: int = 32
    seed: int = 0
    hidden: int = 32
    generator_out_scale: float = 0.1
    checkpoint_interval: int = 10  # epochs between evaluation snapshots
    eval_cap: int = 64
    eval_projections: int = 64
    eval_epsilon: float = 0.0  # 0: per-class default from the high-quality side
    data_classes: int = 3
    data_dim: int = 8
    data_per_class: int = 300
    data_separation: float = 4.0
    data_contraction: float = 0.35
    data_noise: float = 0.25
    data_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise InvalidInput(f"batch_size must be >= 2, got {self.batch_size}")
        if self.critic_steps < 1:
            raise InvalidInput(f"critic_steps must be >= 1, got {self.critic_steps}")
        if self.epochs < 0 or self.steps_per_epoch < 0:
            raise InvalidInput("epochs and steps_per_epoch must be >= 0")
        for k in ("lr_generator", "lr_critic"):
            if not getattr(self, k) > 0:
                raise InvalidInput(f"{k} must be > 0")
        if self.projections < 1 or self.eval_projections < 1:
            raise InvalidInput("projection counts must be >= 1")
        if self.checkpoint_interval < 1 or self.eval_cap < 2 or self.hidden < 1:
            raise InvalidInput("checkpoint_interval >= 1, eval_cap >= 2 and hidden >= 1 are required")
        if not 0 <= self.seed < 2**63:
            raise InvalidInput("seed must be a nonnegative 63-bit integer")
        LossWeights(self.lambda_rmse, self.lambda_sgw, self.lambda_adv, self.gp_weight)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_rmse, self.lambda_sgw, self.lambda_adv, self.gp_weight)

    @property
    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            self.data_classes,
            self.data_dim,
            self.data_per_class,
            self.data_separation,
            self.data_contraction,
            self.data_noise,
            seed=self.data_seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": TrainConfig(),
    # full-scale hyperparameters; 200 passes over the data
    "full": TrainConfig(
        epochs=200,
        steps_per_epoch=0,
        lr_generator=1e-5,
        lr_critic=1e-5,
        projections=256,
        checkpoint_interval=20,
    ),
}


def parse_config_text(text: str, base: TrainConfig | None = None, source: str = "<config>") -> TrainConfig:
    """Flat ``key = value`` lines (``#``/``;`` comments) overriding ``base``."""
    base = base or PRESETS["desk"]
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string("[train]\n" + text, source=source)
    except configparser.Error as exc:
        raise MalformedFile(str(exc).replace("\n", " "), source) from None
    types = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for key, raw in cp["train"].items():
        if key not in types:
            raise MalformedFile(f"unknown config key {key!r}", source)
        updates[key] = _coerce(key, raw, types[key], source)
    try:
        return replace(base, **updates)
    except InvalidInput as exc:
        raise MalformedFile(str(exc), source) from None


def _coerce(key, raw, typ, source):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise MalformedFile(f"bad value {raw!r} for {key}", source) from None
    return raw


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), base, str(path))


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in cfg.to_dict().items())


# ------------------------------------------------------------ evaluation


@dataclass
class RelationalEval:
    per_class: dict[str, float]
    overall: float
    epsilons: dict[str, float]
    subsample_seed: int
    counts: dict[str, int] = field(default_factory=dict)
    converged: dict[str, bool] = field(default_factory=dict)


def _subsample_pair(lo: EmbeddingSet, hi: EmbeddingSet, cap: int, rng: SeededRng):
    """Cap both sides at ``cap`` points, then trim to a common size.

    Equal-sized sides are treated as paired and share one index draw.
    """
    if lo.n == hi.n:
        if lo.n <= cap:
            return lo, hi
        idx = np.sort(rng.choice(lo.n, cap))
        return lo.subset(idx), hi.subset(idx)
    m = min(lo.n, hi.n, cap)
    pick = lambda e, r: e if e.n == m else e.subset(np.sort(r.choice(e.n, m)))
    return pick(lo, rng.spawn(0)), pick(hi, rng.spawn(1))


def evaluate_relational(gen: DenseNet | None, low: EmbeddingSet, high: EmbeddingSet, epsilon: float | None = None, cap: int = 64, seed: int = 0) -> RelationalEval:
    """Entropic GW^2 between ``G(low_c)`` and ``high_c`` for every label ``c``.

    Each class is subsampled to at most ``cap`` points per side with a stream
    derived from ``seed``; the subsample depends only on the data, not on
    ``gen``. ``epsilon=None`` uses the scale-adaptive default of each
    high-quality class. ``overall`` is the class-size weighted mean.
    """
    lows = split_by_label(low)
    highs = split_by_label(high)
    rng = SeededRng(seed)
    per, eps_used, counts, conv = {}, {}, {}, {}
    for k, lab in enumerate(sorted(set(lows) & set(highs))):
        sub = rng.spawn(k)
        lo, hi = _subsample_pair(lows[lab], highs[lab], cap, sub)
        src = lo if gen is None else EmbeddingSet(forward(gen, lo.points))
        dy = pairwise_distances(hi).values
        eps = default_epsilon(dy) if not epsilon else float(epsilon)
        res = gw_entropic(src, hi, eps)
        per[lab] = res.value
        conv[lab] = res.converged
        eps_used[lab] = eps
        counts[lab] = lows[lab].n
    total = sum(counts.values())
    overall = math.fsum(per[l] * counts[l] for l in per) / total if total else math.nan
    return RelationalEval(per, overall, eps_used, seed, counts, conv)


# -------------------------------------------------------------- training


@dataclass
class Snapshot:
    step: int
    epoch: int
    sgw_to_target: float
    relational: dict[str, float]
    relational_overall: float
    class_separation: float


@dataclass
class TrainReport:
    config: TrainConfig
    history: list[tuple[int, int, LossBreakdown]]
    snapshots: list[Snapshot]
    initial_sgw_raw: float
    initial_sgw_generator: float
    final_sgw: float
    final_relational: RelationalEval | None
    eval_seed: int
    checkpoint_path: str | None = None
    generator: DenseNet | None = None
    critic: DenseNet | None = None


def build_networks(cfg: TrainConfig, rng: SeededRng) -> tuple[DenseNet, DenseNet]:
    d, h = cfg.data_dim, cfg.hidden
    gen = DenseNet.init([d, h, h, d], "leaky_relu", rng, residual=True, out_scale=cfg.generator_out_scale)
    critic = DenseNet.init([d, h, h, 1], "leaky_relu", rng)
    return gen, critic


def _sgw_to_target(gen, dataset, L, seed):
    basis = sample_basis(seed, L, dataset.high.d)
    pts = dataset.low.points if gen is None else forward(gen, dataset.low.points)
    return sgw_fast(EmbeddingSet(pts), dataset.high, basis).value


def snapshot(gen, cfg, dataset, step, epoch, eval_seed) -> tuple[Snapshot, RelationalEval]:
    rel = evaluate_relational(gen, dataset.low, dataset.high, cfg.eval_epsilon or None, cfg.eval_cap, eval_seed)
    out = forward(gen, dataset.low.points)
    snap = Snapshot(
        step,
        epoch,
        _sgw_to_target(gen, dataset, cfg.eval_projections, eval_seed),
        rel.per_class,
        rel.overall,
        class_separation(out, dataset.low.labels),
    )
    return snap, rel


def train(cfg: TrainConfig, dataset: SyntheticDataset | None = None, checkpoint_path=None, evaluate: bool = True) -> TrainReport:
    """Alternate ``critic_steps`` critic updates with one generator update.

    Every random draw comes from a child stream of ``cfg.seed`` (init,
    minibatches, penalty interpolation, projections), so switching the SGW
    weight off leaves every other draw unchanged.
    """
    if dataset is None:
        dataset = make_synthetic(cfg.dataset_spec, cfg.batch_size)
    if dataset.low.n < cfg.batch_size or dataset.high.n < cfg.batch_size:
        raise InvalidInput("dataset smaller than one batch")
    root = SeededRng(cfg.seed)
    gen, critic = build_networks(cfg, root.spawn(1))
    batches, gp_rng, proj_rng = root.spawn(2), root.spawn(3), root.spawn(4)
    eval_seed = root.spawn(5).seed
    weights = cfg.weights
    opt_g = AdamState.for_params(gen.params(), cfg.lr_generator, cfg.beta1, cfg.beta2)
    opt_d = AdamState.for_params(critic.params(), cfg.lr_critic, cfg.beta1, cfg.beta2)
    low, high = dataset.low.points, dataset.high.points
    B = cfg.batch_size
    steps_per_epoch = cfg.steps_per_epoch or max(1, dataset.low.n // B)

    initial_raw = _sgw_to_target(None, dataset, cfg.eval_projections, eval_seed)
    initial_gen = _sgw_to_target(gen, dataset, cfg.eval_projections, eval_seed)
    history, snaps = [], []
    final_rel = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(steps_per_epoch):
            step += 1
            for _ in range(cfg.critic_steps):
                x = low[batches.choice(len(low), B)]
                y = high[batches.choice(len(high), B)]
                fake = forward(gen, x)
                cl = critic_loss(critic, y, fake, weights.gp_weight, gp_rng)
                adam_step(critic.params(), cl.grads, opt_d)
            x = low[batches.choice(len(low), B)]
            y = high[batches.choice(len(high), B)]
            gs = generator_objective(gen, critic, x, y, weights, proj_rng, cfg.projections)
            bd = LossBreakdown(cl.value, cl.penalty, gs.rmse, gs.sgw, gs.adv, gs.total)
            if not bd.is_finite() or not all(np.all(np.isfinite(g)) for g in gs.grads.params):
                raise NonFiniteLoss(f"non-finite loss at step {step}: {bd}", bd, step)
            adam_step(gen.params(), gs.grads.params, opt_g)
            history.append((step, epoch, bd))
        if evaluate and (epoch % cfg.checkpoint_interval == 0 or epoch == cfg.epochs):
            snap, final_rel = snapshot(gen.copy(), cfg, dataset, step, epoch, eval_seed)
            snaps.append(snap)

    final_sgw = _sgw_to_target(gen, dataset, cfg.eval_projections, eval_seed)
    if evaluate and final_rel is None:  # zero epochs: nothing was snapshotted
        final_rel = evaluate_relational(gen, dataset.low, dataset.high, cfg.eval_epsilon or None, cfg.eval_cap, eval_seed)
    if checkpoint_path is not None:
        save_checkpoint({"generator": gen, "critic": critic}, checkpoint_path, {"config": cfg.to_dict(), "step": step})
    return TrainReport(
        cfg,
        history,
        snaps,
        initial_raw,
        initial_gen,
        final_sgw,
        final_rel,
        eval_seed,
        None if checkpoint_path is None else str(checkpoint_path),
        gen,
        critic,
    )


# --------------------------------------------------------- serialisation


def _num(v):
    """JSON-safe float: non-finite values become strings."""
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def report_lines(report: TrainReport) -> list[str]:
    """Line-delimited JSON records.

    1. ``{"record": "config", "version", ...all TrainConfig keys...}``
    2. one ``{"record": "step", "step", "epoch", "critic_loss", "gp_term",
       "rmse_term", "sgw_term", "adv_term", "total_generator"}`` per generator step
    3. one ``{"record": "snapshot", "step", "epoch", "sgw_to_target",
       "class_separation", "relational_overall", "relational": {label: value}}``
       per evaluation
    4. ``{"record": "summary", ...}`` last
    """
    dump = lambda obj: json.dumps(obj, separators=(",", ":"))
    lines = [dump({"record": "config", "version": REPORT_VERSION, **report.config.to_dict()})]
    for step, epoch, bd in report.history:
        rec = {"record": "step", "step": step, "epoch": epoch}
        rec.update({k: _num(v) for k, v in asdict(bd).items()})
        lines.append(dump(rec))
    for s in report.snapshots:
        lines.append(
            dump(
                {
                    "record": "snapshot",
                    "step": s.step,
                    "epoch": s.epoch,
                    "sgw_to_target": _num(s.sgw_to_target),
                    "class_separation": _num(s.class_separation),
                    "relational_overall": _num(s.relational_overall),
                    "relational": {k: _num(v) for k, v in s.relational.items()},
                }
            )
        )
    rel = report.final_relational
    lines.append(
        dump(
            {
                "record": "summary",
                "steps": len(report.history),
                "initial_sgw_raw": _num(report.initial_sgw_raw),
                "initial_sgw_generator": _num(report.initial_sgw_generator),
                "final_sgw": _num(report.final_sgw),
                "final_relational_overall": None if rel is None else _num(rel.overall),
                "final_relational": None if rel is None else {k: _num(v) for k, v in rel.per_class.items()},
                "eval_seed": report.eval_seed,
                "checkpoint": None if report.checkpoint_path is None else Path(report.checkpoint_path).name,
            }
        )
    )
    return lines


def write_report(report: TrainReport, path) -> None:
    Path(path).write_text("\n".join(report_lines(report)) + "\n", encoding="utf-8")


def read_report(path) -> dict:
    """Parse a report file into ``{"config", "steps", "snapshots", "summary"}``."""
    path = Path(path)
    out = {"config": None, "steps": [], "snapshots": [], "summary": None}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec.pop("record")
        except (json.JSONDecodeError, KeyError, AttributeError, TypeError):
            raise MalformedFile("not a report record", path, lineno) from None
        if kind == "step":
            out["steps"].append(rec)
        elif kind == "snapshot":
            out["snapshots"].append(rec)
        elif kind in ("config", "summary"):
            out[kind] = rec
        else:
            raise MalformedFile(f"unknown record type {kind!r}", path, lineno)
    return out


def load_generator(path) -> tuple[DenseNet, dict]:
    nets, extra = load_checkpoint(path)
    if "generator" not in nets:
        raise MalformedFile("checkpoint has no generator", path)
    return nets["generator"], extra
