import math
from dataclasses import replace

import numpy as np
import pytest

from sgwgan.core import split_by_label
from sgwgan.errors import InvalidInput, InvalidSpec, MalformedFile, NonFiniteLoss
from sgwgan.gw_exact import default_epsilon, gw_entropic
from sgwgan.core import pairwise_distances
from sgwgan.nn import forward
from sgwgan.trainer import (
    PRESETS,
    DatasetSpec,
    TrainConfig,
    class_separation,
    evaluate_relational,
    format_config,
    identity_net,
    inverse_degradation_net,
    load_generator,
    make_synthetic,
    parse_config_text,
    read_report,
    train,
    write_report,
)

TINY = replace(
    PRESETS["desk"],
    epochs=2,
    steps_per_epoch=4,
    critic_steps=2,
    hidden=8,
    checkpoint_interval=1,
    eval_cap=12,
    eval_projections=8,
    projections=8,
    data_dim=3,
    data_per_class=20,
)


def test_synthetic_shapes_and_determinism():
    spec = DatasetSpec(n_classes=3, dim=5, per_class=40, seed=3)
    a, b = make_synthetic(spec), make_synthetic(spec)
    assert a.low.points.shape == (120, 5) and a.high.points.shape == (120, 5)
    assert a.low.points.tobytes() == b.low.points.tobytes()
    assert list(split_by_label(a.high)) == ["c0", "c1", "c2"]
    sv = np.linalg.svd(a.degradation, compute_uv=False)
    np.testing.assert_allclose(np.sort(sv), np.linspace(0.35, 1.0, 5), atol=1e-12)
    assert np.linalg.norm(a.means.mean(0)) < 1e-12


def test_synthetic_noise_free_and_identity():
    d = make_synthetic(DatasetSpec(dim=4, per_class=10, noise=0.0))
    np.testing.assert_allclose(d.low.points, d.high.points @ d.degradation.T, atol=1e-12)
    i = make_synthetic(DatasetSpec(dim=4, per_class=10, noise=0.0, identity_degradation=True))
    np.testing.assert_array_equal(i.low.points, i.high.points)


@pytest.mark.parametrize("kw", [dict(n_classes=1), dict(dim=1), dict(per_class=1), dict(contraction=0.0), dict(noise=-1.0)])
def test_synthetic_rejects_bad_spec(kw):
    with pytest.raises(InvalidSpec):
        make_synthetic(DatasetSpec(**kw))


def test_class_separation_sign(rng):
    pts = np.concatenate([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 10])
    labels = ["a"] * 30 + ["b"] * 30
    assert class_separation(pts, labels) > 0.8
    assert class_separation(pts, labels[::2] + labels[1::2]) < 0.1


def test_relational_perfect_inverse_is_near_zero():
    d = make_synthetic(DatasetSpec(dim=4, per_class=30, noise=0.0))
    ev = evaluate_relational(inverse_degradation_net(d), d.low, d.high, cap=30, seed=1)
    raw = evaluate_relational(None, d.low, d.high, cap=30, seed=1)
    assert set(ev.per_class) == {"c0", "c1", "c2"}
    for lab, v in ev.per_class.items():
        assert 0 <= v < ev.epsilons[lab] * math.log(30)
        assert v < 0.05 * raw.per_class[lab]


def test_relational_identity_equals_direct():
    d = make_synthetic(DatasetSpec(dim=4, per_class=25))
    ev = evaluate_relational(identity_net(4), d.low, d.high, cap=64, seed=0)
    plain = evaluate_relational(None, d.low, d.high, cap=64, seed=0)
    lows, highs = split_by_label(d.low), split_by_label(d.high)
    for lab in lows:
        eps = default_epsilon(pairwise_distances(highs[lab]).values)
        direct = gw_entropic(lows[lab], highs[lab], eps).value
        assert ev.per_class[lab] == pytest.approx(direct, rel=1e-9)
        assert plain.per_class[lab] == ev.per_class[lab]
    assert ev.overall == pytest.approx(np.mean(list(ev.per_class.values())), rel=1e-12)


def test_relational_subsampling_is_seeded():
    d = make_synthetic(DatasetSpec(dim=3, per_class=40))
    a = evaluate_relational(None, d.low, d.high, cap=10, seed=4)
    b = evaluate_relational(None, d.low, d.high, cap=10, seed=4)
    c = evaluate_relational(None, d.low, d.high, cap=10, seed=5)
    assert a.per_class == b.per_class
    assert a.per_class != c.per_class


def test_config_round_trip_and_errors():
    cfg = replace(TINY, seed=9, lambda_sgw=0.0)
    assert parse_config_text(format_config(cfg)) == cfg
    assert parse_config_text("epochs = 3  # short\nlr_generator = 1e-4\n").epochs == 3
    with pytest.raises(MalformedFile, match="unknown config key"):
        parse_config_text("epocs = 3")
    with pytest.raises(MalformedFile, match="bad value"):
        parse_config_text("epochs = many")
    with pytest.raises(MalformedFile):
        parse_config_text("batch_size = 1")
    with pytest.raises(InvalidInput):
        TrainConfig(lr_generator=0.0)


def test_presets():
    desk = PRESETS["desk"]
    assert (desk.data_dim, desk.data_classes, desk.data_per_class) == (8, 3, 300)
    assert (desk.batch_size, desk.projections, desk.epochs * desk.steps_per_epoch) == (16, 32, 2000)
    full = PRESETS["full"]
    assert (full.epochs, full.lr_generator, full.projections) == (200, 1e-5, 256)


def test_train_is_deterministic_and_reports(tmp_path):
    a = train(TINY, checkpoint_path=tmp_path / "a.sgwn")
    b = train(TINY, checkpoint_path=tmp_path / "b.sgwn")
    assert [bd for _, _, bd in a.history] == [bd for _, _, bd in b.history]
    assert (tmp_path / "a.sgwn").read_bytes() == (tmp_path / "b.sgwn").read_bytes()
    assert len(a.history) == 8 and len(a.snapshots) == 2
    path = tmp_path / "r.jsonl"
    write_report(a, path)
    rep = read_report(path)
    assert rep["config"]["seed"] == TINY.seed
    assert [r["step"] for r in rep["steps"]] == list(range(1, 9))
    assert rep["steps"][0]["sgw_term"] == a.history[0][2].sgw_term
    assert rep["summary"]["final_relational_overall"] == a.final_relational.overall
    gen, extra = load_generator(tmp_path / "a.sgwn")
    x = make_synthetic(TINY.dataset_spec).low.points[:5]
    assert forward(gen, x).tobytes() == forward(a.generator, x).tobytes()
    assert extra["step"] == 8


def test_ablation_keeps_other_draws():
    full = train(TINY, evaluate=False)
    abl = train(replace(TINY, lambda_sgw=0.0), evaluate=False)
    assert abl.initial_sgw_generator == full.initial_sgw_generator
    f0, a0 = full.history[0][2], abl.history[0][2]
    # identical critic updates and batches before the first generator step
    assert (f0.critic_loss, f0.rmse_term, f0.sgw_term, f0.adv_term) == (a0.critic_loss, a0.rmse_term, a0.sgw_term, a0.adv_term)
    assert f0.total_generator != a0.total_generator
    assert full.history[1][2].critic_loss != abl.history[1][2].critic_loss


def test_zero_epochs_still_evaluates():
    r = train(replace(TINY, epochs=0))
    assert r.history == [] and r.final_relational is not None
    assert r.final_sgw == r.initial_sgw_generator


def test_non_finite_loss_raises():
    cfg = replace(TINY, lr_generator=1e200, lr_critic=1e200, epochs=3)
    with np.errstate(all="ignore"):
        with pytest.raises(NonFiniteLoss) as info:
            train(cfg, evaluate=False)
    assert info.value.step >= 1


def test_dataset_smaller_than_batch():
    d = make_synthetic(DatasetSpec(dim=3, per_class=2))
    with pytest.raises(InvalidInput):
        train(TINY, dataset=d)
