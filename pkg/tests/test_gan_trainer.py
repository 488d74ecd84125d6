import numpy as np
import pytest

from balance_lab.diffkernel import Graph
from balance_lab.gan_trainer import (
    EMA,
    Adam,
    MLP,
    PretrainedClassifier,
    TrainerConfig,
    TrainingDiverged,
    load_checkpoint,
    make_classifier,
    make_discriminator,
    make_generator,
    pretrain_classifier,
    relativistic_losses,
    save_checkpoint,
    train,
    train_fixed_stats,
)
from balance_lab.longtail_data import LabeledDataset, LongTailSpec, make_balanced, make_longtail

TINY_TRAINER = dict(
    n_classes=3,
    noise_dim=4,
    batch_size=16,
    iterations=40,
    cycle_len=20,
    eval_samples=64,
)


def tiny_data(seed=0):
    spec = LongTailSpec(n_classes=3, rho=10.0, n_max=30, seed=seed)
    return spec, make_longtail(spec)


def tiny_classifier(data, seed=0):
    return pretrain_classifier(data, epochs=10, lr=2e-3, seed=seed).model


def test_mlp_apply_matches_graph_forward():
    rng = np.random.default_rng(0)
    for maker, in_dim in ((make_generator, 4), (make_discriminator, 2)):
        net = maker(in_dim, 2, rng) if maker is make_generator else maker(2, rng)
        x = rng.normal(size=(5, net.sizes[0]))
        graph = Graph()
        out = net.bind(graph, trainable=False)(graph.leaf(x))
        assert np.allclose(out.value, net.apply(x), atol=1e-12)


def test_mlp_apply_with_params_override():
    rng = np.random.default_rng(1)
    net = make_classifier(2, 3, rng)
    other = make_classifier(2, 3, np.random.default_rng(2))
    x = rng.normal(size=(4, 2))
    override = net.apply(x, params=other.parameters())
    assert np.allclose(override, other.apply(x), atol=1e-12)


def test_adam_descends_a_quadratic():
    target = np.array([[1.0, -2.0]])
    param = np.zeros((1, 2))
    adam = Adam([param], lr=0.05)
    for _ in range(500):
        adam.step([2.0 * (param - target)])
    assert np.allclose(param, target, atol=1e-2)


def test_adam_rejects_wrong_gradient_count():
    adam = Adam([np.zeros((1, 2))])
    with pytest.raises(ValueError):
        adam.step([])


def test_ema_snapshot_then_decay():
    param = [np.array([[1.0]])]
    ema = EMA(decay=0.9, start_step=5)
    ema.update(0, param)
    assert ema.shadow is None  # inactive before start
    ema.update(5, param)  # first active update is a snapshot
    assert ema.shadow[0][0, 0] == 1.0
    param[0][0, 0] = 2.0
    ema.update(6, param)
    assert abs(ema.shadow[0][0, 0] - (0.9 * 1.0 + 0.1 * 2.0)) <= 1e-15
    assert ema.parameters_or(param) is ema.shadow


def test_ema_validation():
    with pytest.raises(ValueError):
        EMA(decay=0.0, start_step=0)
    with pytest.raises(ValueError):
        EMA(decay=1.5, start_step=0)


def test_relativistic_losses_equal_scores_give_log_two():
    g = Graph()
    scores = g.leaf(np.full((8, 1), 0.7))
    loss_d, loss_g = relativistic_losses(g, scores, scores)
    assert abs(loss_d.value[0, 0] - np.log(2.0)) <= 1e-12
    assert abs(loss_g.value[0, 0] - np.log(2.0)) <= 1e-12


def test_relativistic_losses_reward_real_over_fake():
    g = Graph()
    real = g.leaf(np.full((4, 1), 3.0))
    fake = g.leaf(np.full((4, 1), -3.0))
    loss_d, loss_g = relativistic_losses(g, real, fake)
    assert loss_d.value[0, 0] < np.log(2.0) < loss_g.value[0, 0]


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=1)
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=3, lam=-0.5)
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=3, alpha=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=3, beta=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=3, label_proposal="nope")
    with pytest.raises(ValueError):
        TrainerConfig(n_classes=3, stat_counting="maybe")
    cfg = TrainerConfig(n_classes=3, beta=None, alpha=0.25)
    assert cfg.beta_value == 0.25
    assert TrainerConfig(n_classes=3, iterations=100).resolved_ema_start() == 20
    assert TrainerConfig(n_classes=3, ema_start=7).resolved_ema_start() == 7


def test_pretrained_classifier_separates_clean_mixture():
    spec = LongTailSpec(n_classes=3, rho=2.0, n_max=60, seed=0)
    data = make_longtail(spec)
    test = make_balanced(spec, 30)
    clf = pretrain_classifier(data, epochs=30, lr=2e-3, seed=[0, 20], eval_data=test)
    assert isinstance(clf, PretrainedClassifier)
    assert clf.accuracy > 0.9
    assert clf.tail_accuracy > 0.9
    assert not clf.flagged


def test_pretrained_classifier_flags_missing_class():
    spec = LongTailSpec(n_classes=3, rho=2.0, n_max=60, seed=0)
    data = make_longtail(spec)
    test = make_balanced(spec, 30)
    keep = data.labels != 2
    clipped = LabeledDataset(data.samples[keep], data.labels[keep], 3)
    with pytest.warns(RuntimeWarning, match="cannot separate"):
        clf = pretrain_classifier(clipped, epochs=20, lr=2e-3, seed=[0, 20],
                                  eval_data=test)
    assert clf.flagged
    assert clf.missing_classes.tolist() == [2]
    assert clf.tail_accuracy == 0.0


def test_train_produces_per_cycle_history():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, **TINY_TRAINER)
    result = train(cfg, data, clf, eval_real=data.samples)
    assert len(result.history) == 2  # 40 iterations / 20 per cycle
    assert result.eval_fractions.shape == (3, 3)  # row 0: untrained generator
    for m in result.history:
        assert np.isfinite([m.loss_d, m.loss_g, m.loss_reg]).all()
        assert abs(m.n_dist.sum() - 1.0) <= 1e-9
        assert abs(m.class_fracs.sum() - 1.0) <= 1e-9
        assert 0.0 <= m.kl_uniform <= np.log(3) + 1e-9
        assert m.frechet >= 0.0
    assert result.history[0].iteration == 20
    assert result.history[1].cycle == 2


def test_train_is_bitwise_deterministic():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=5, **TINY_TRAINER)
    a = train(cfg, data, clf)
    b = train(cfg, data, clf)
    for pa, pb in zip(a.generator.parameters(), b.generator.parameters()):
        assert np.array_equal(pa, pb)
    for ma, mb in zip(a.history, b.history):
        assert ma.loss_g == mb.loss_g and ma.kl_uniform == mb.kl_uniform
    assert np.array_equal(a.sample(50, seed=1), b.sample(50, seed=1))


def test_train_seed_changes_the_run():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    a = train(TrainerConfig(seed=0, **TINY_TRAINER), data, clf)
    b = train(TrainerConfig(seed=1, **TINY_TRAINER), data, clf)
    assert not np.array_equal(a.generator.parameters()[0],
                              b.generator.parameters()[0])


def test_train_without_annotator_uses_classifier_for_kl():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    result = train(TrainerConfig(seed=0, **TINY_TRAINER), data, clf)
    assert np.isnan(result.history[-1].frechet)  # no eval_real given
    assert result.history[-1].kl_uniform >= 0.0


def test_train_validates_data():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, **TINY_TRAINER)
    with pytest.raises(TypeError):
        train(cfg, data.samples, clf)
    with pytest.raises(ValueError):
        train(TrainerConfig(seed=0, **{**TINY_TRAINER, "data_dim": 3}), data, clf)


def test_inverse_frequency_proposal_warns_and_continues():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, label_proposal="inverse-frequency", **TINY_TRAINER)
    with pytest.warns(RuntimeWarning, match="inverse-frequency"):
        result = train(cfg, data, clf)
    assert len(result.history) == 2


def test_soft_counting_tracks_probability_mass():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, stat_counting="soft", **TINY_TRAINER)
    result = train(cfg, data, clf)
    # soft pending counts are fractional, so the effective counts differ
    # from any argmax run but still normalize cleanly
    assert abs(result.stats.distribution().p.sum() - 1.0) <= 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_diverged():
    # a classifier with blown-up weights overflows to inf - inf = nan in
    # its second matmul; the loop must stop rather than train on garbage
    spec, data = tiny_data()
    broken = make_classifier(2, 3, np.random.default_rng(0))
    for w in broken.weights:
        w *= 1e200
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(TrainerConfig(seed=0, **TINY_TRAINER), data, broken)


def test_fixed_stats_freezes_the_penalty_weights():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, **TINY_TRAINER)
    fixed = train_fixed_stats(cfg, data, clf, [5.0, 1.0, 1.0])
    target = np.array([5.0, 1.0, 1.0]) / 7.0
    for m in fixed.result.history:
        assert np.allclose(m.n_dist, target, atol=1e-12)
    assert fixed.fractions.shape == (3, 3)
    assert np.allclose(fixed.class0, fixed.fractions[:, 0])


def test_fixed_stats_validation():
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    cfg = TrainerConfig(seed=0, **TINY_TRAINER)
    with pytest.raises(ValueError):
        train_fixed_stats(cfg, data, clf, [1.0, 1.0])
    with pytest.raises(ValueError):
        train_fixed_stats(cfg, data, clf, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        train_fixed_stats(cfg, data, clf, [1.0, np.inf, 1.0])


def test_checkpoint_round_trip(tmp_path):
    spec, data = tiny_data()
    clf = tiny_classifier(data)
    result = train(TrainerConfig(seed=0, **TINY_TRAINER), data, clf)
    npz = tmp_path / "ck.npz"
    manifest_path = tmp_path / "ck.json"
    save_checkpoint(npz, manifest_path, result, extra={"note": "x"})
    nets, manifest = load_checkpoint(npz, manifest_path)
    assert manifest["note"] == "x"
    assert manifest["seed"] == 0
    x = np.zeros((1, 4))
    assert np.array_equal(nets["g"].apply(x), result.generator.apply(x))
    assert np.array_equal(nets["ema"].apply(x), result.ema_generator.apply(x))
    assert np.array_equal(
        nets["d"].apply(np.zeros((1, 2))),
        result.discriminator.apply(np.zeros((1, 2))),
    )
