from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sepll.data import (
    MappingMatrix,
    MatchMatrix,
    SynthSpec,
    build_targets,
    synth_dataset,
    to_one_class_lfs,
)
from sepll.encoder import EncoderConfig, featurize_split
from sepll.errors import ConfigError, DataError, NumericalError
from sepll.evaluation import task_metrics
from sepll.lf_engine import majority_vote
from sepll.model import backward, init_params, param_items, predict_batch
from sepll.trainer import (
    VARIANT_ORDER,
    TrainConfig,
    TrainHistory,
    EpochRecord,
    ablation_config,
    adamw_step,
    init_optimizer,
    inject_noise,
    lr_schedule,
    run_ablation,
    train,
)

SMALL_ENC = EncoderConfig(max_features=300, hidden=(16,), dim=8)


def small_splits(seed=0, n_train=120, n_dev=40, n_test=40):
    spec = SynthSpec(n_train=n_train, n_dev=n_dev, n_test=n_test)
    splits = synth_dataset(spec, seed=seed)
    conv = to_one_class_lfs(splits)
    return splits, conv


def fast_config(**kw):
    base = dict(max_epochs=4, patience=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# learning-rate schedule


def test_lr_schedule_no_warmup_is_constant():
    assert lr_schedule(1, 0, 0.5) == 0.5
    assert lr_schedule(10_000, 0, 0.5) == 0.5


def test_lr_schedule_linear_ramp():
    assert lr_schedule(0, 10, 1.0) == 0.0
    assert lr_schedule(5, 10, 2.0) == pytest.approx(1.0)
    assert lr_schedule(10, 10, 2.0) == 2.0
    assert lr_schedule(11, 10, 2.0) == 2.0


def test_lr_schedule_rejects_negative_step():
    with pytest.raises(ConfigError):
        lr_schedule(-1, 5, 1.0)


# ---------------------------------------------------------------------------
# optimizer


def zeroed_tiny_params():
    mapping = MappingMatrix(c=2, class_of=np.array([0, 1]))
    params = init_params(
        3, mapping, EncoderConfig(max_features=10, hidden=(), dim=2),
        rng=np.random.default_rng(0),
    )
    for _, arr in param_items(params):
        arr[:] = 0.0
    return params


def zero_grads(params):
    return {name: np.zeros_like(arr) for name, arr in param_items(params)}


def test_adamw_first_step_frozen_value():
    # g=1, lr=0.1, wd=0: bias-corrected m-hat = v-hat = 1, so the update is
    # exactly lr / (1 + eps)
    params = zeroed_tiny_params()
    grads = zero_grads(params)
    grads["task.0.b"][0] = 1.0
    state = init_optimizer(params)
    adamw_step(params, grads, state, TrainConfig(weight_decay=0.0), current_lr=0.1)
    assert params.task_head[0].b[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-18)
    # untouched parameters stay exactly zero
    assert params.lf_head[0].b[0] == 0.0
    assert np.all(params.encoder.layers[0].W == 0.0)


def test_adamw_weight_decay_uses_pre_update_theta():
    # zero gradient, wd=0.01, lr=0.1, theta=1 -> theta - lr*wd*theta = 0.999
    params = zeroed_tiny_params()
    params.task_head[0].b[0] = 1.0
    state = init_optimizer(params)
    adamw_step(params, zero_grads(params), state, TrainConfig(weight_decay=0.01), current_lr=0.1)
    assert params.task_head[0].b[0] == pytest.approx(0.999, abs=1e-15)


def test_adamw_two_steps_match_reference_loop():
    params = zeroed_tiny_params()
    state = init_optimizer(params)
    cfg = TrainConfig(weight_decay=0.01)
    lr = 0.05
    gs = [0.7, -1.3]
    theta_ref, m_ref, v_ref = 0.0, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        grads = zero_grads(params)
        grads["lf.0.b"][1] = g
        adamw_step(params, grads, state, cfg, current_lr=lr)
        m_ref = 0.9 * m_ref + 0.1 * g
        v_ref = 0.999 * v_ref + 0.001 * g * g
        m_hat = m_ref / (1 - 0.9**t)
        v_hat = v_ref / (1 - 0.999**t)
        theta_ref -= lr * m_hat / (np.sqrt(v_hat) + 1e-8) + lr * 0.01 * theta_ref
    assert params.lf_head[0].b[1] == pytest.approx(theta_ref, abs=1e-16)
    assert state.step == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_adamw_rejects_non_finite_update():
    params = zeroed_tiny_params()
    grads = zero_grads(params)
    grads["task.0.b"][0] = np.inf
    state = init_optimizer(params)
    with pytest.raises(NumericalError, match="task.0.b"):
        adamw_step(params, grads, state, TrainConfig(), current_lr=0.1)


def test_adamw_descends_on_fixed_batch(rng):
    # repeated steps on one batch must reduce the loss
    mapping = MappingMatrix(c=2, class_of=np.array([0, 0, 1, 1]))
    params = init_params(
        6, mapping, EncoderConfig(max_features=10, hidden=(5,), dim=4),
        rng=np.random.default_rng(3),
    )
    X = rng.normal(size=(8, 6))
    targets = build_targets(
        MatchMatrix.from_dense((rng.random((8, 4)) < 0.5).astype(int))
    ).rows
    state = init_optimizer(params)
    cfg = TrainConfig(weight_decay=0.0)
    first, _ = backward(params, X, targets)
    for _ in range(40):
        loss, grads = backward(params, X, targets)
        adamw_step(params, grads, state, cfg, current_lr=1e-2)
    final, _ = backward(params, X, targets)
    assert final < first


# ---------------------------------------------------------------------------
# noise injection


def demo_match():
    # rows: 0 matches LF0 (class 0); 1 matches LF2 (class 1); 2 matches nothing
    dense = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]])
    mapping = MappingMatrix(c=2, class_of=np.array([0, 0, 1, 1]))
    return MatchMatrix.from_dense(dense), mapping


def test_inject_noise_lambda_zero_is_identity():
    match, mapping = demo_match()
    out = inject_noise(match, mapping, 0.0, np.random.default_rng(0))
    assert out == match


def test_inject_noise_lambda_one_completes_classes():
    match, mapping = demo_match()
    out = inject_noise(match, mapping, 1.0, np.random.default_rng(0))
    # row 0: class 0 hit -> LF1 added, class 1 untouched; row 1: LF3 added;
    # row 2: nothing to seed from
    assert out.to_dense().tolist() == [
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 0, 0],
    ]


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_inject_noise_never_removes_and_respects_classes(seed, lam):
    rng = np.random.default_rng(seed)
    n, m, c = 12, 6, 3
    dense = (rng.random((n, m)) < 0.4).astype(np.int64)
    class_of = rng.integers(0, c, size=m)
    match = MatchMatrix.from_dense(dense)
    mapping = MappingMatrix(c=c, class_of=class_of)
    out = inject_noise(match, mapping, lam, np.random.default_rng(seed + 1)).to_dense()
    assert np.all(out >= dense)
    added = (out > 0) & (dense == 0)
    class_hit = np.zeros((n, c), dtype=bool)
    for k in range(c):
        cols = class_of == k
        if cols.any():
            class_hit[:, k] = dense[:, cols].any(axis=1)
    assert not np.any(added & ~class_hit[:, class_of])


def test_inject_noise_rate_matches_bernoulli():
    n = 20_000
    dense = np.zeros((n, 4), dtype=np.int64)
    dense[:, 0] = 1  # every row matches LF0; LF1 shares its class
    mapping = MappingMatrix(c=2, class_of=np.array([0, 0, 1, 1]))
    lam = 0.1
    out = inject_noise(
        MatchMatrix.from_dense(dense), mapping, lam, np.random.default_rng(99)
    ).to_dense()
    added = int(out[:, 1].sum())
    assert out[:, 2].sum() == 0 and out[:, 3].sum() == 0  # other class untouched
    sigma = np.sqrt(n * lam * (1 - lam))
    assert abs(added - n * lam) <= 3 * sigma


def test_inject_noise_identical_under_same_rng():
    match, mapping = demo_match()
    a = inject_noise(match, mapping, 0.5, np.random.default_rng(7))
    b = inject_noise(match, mapping, 0.5, np.random.default_rng(7))
    assert a == b


def test_inject_noise_validates():
    match, mapping = demo_match()
    with pytest.raises(ConfigError):
        inject_noise(match, mapping, 1.5, np.random.default_rng(0))
    bad_mapping = MappingMatrix(c=2, class_of=np.array([0, 1]))
    with pytest.raises(DataError, match="LF dimension mismatch"):
        inject_noise(match, bad_mapping, 0.1, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# config


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(weight_decay=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(noise_lambda=2.0)
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
    with pytest.raises(ConfigError):
        TrainConfig(metric="auc")
    with pytest.raises(ConfigError):
        TrainConfig(l2_lf_target="weights")
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=-1)


# ---------------------------------------------------------------------------
# training loop


def test_train_beats_majority_vote_on_dev():
    splits, conv = small_splits(seed=0, n_train=200)
    params, history, vocab = train(
        splits, conv.match["train"], conv.mapping,
        fast_config(max_epochs=10, patience=4), SMALL_ENC,
    )
    dev_gold = np.array([s.gold_label for s in splits.dev])
    mv_preds = majority_vote(conv.match["dev"], conv.mapping, seed=0)
    mv_acc = float((mv_preds == dev_gold).mean())
    assert history.best_dev_metric > mv_acc
    assert history.best_epoch >= 0


def test_train_returns_parameters_of_best_epoch():
    splits, conv = small_splits(seed=1)
    params, history, vocab = train(
        splits, conv.match["train"], conv.mapping, fast_config(seed=1), SMALL_ENC
    )
    X_dev = featurize_split([s.text for s in splits.dev], vocab)
    preds = predict_batch(params, X_dev)
    gold = np.array([s.gold_label for s in splits.dev])
    report = task_metrics(preds, gold, n_classes=conv.mapping.c)
    assert report.accuracy == pytest.approx(history.best_dev_metric, abs=1e-12)


def test_train_is_deterministic():
    splits, conv = small_splits(seed=2)
    cfg = fast_config(max_epochs=2, seed=5)
    a_params, a_hist, _ = train(splits, conv.match["train"], conv.mapping, cfg, SMALL_ENC)
    b_params, b_hist, _ = train(splits, conv.match["train"], conv.mapping, cfg, SMALL_ENC)
    assert [r.train_loss for r in a_hist.epochs] == [r.train_loss for r in b_hist.epochs]
    for (na, aa), (nb, ab) in zip(param_items(a_params), param_items(b_params)):
        assert na == nb
        assert np.array_equal(aa, ab), na


def test_train_seed_changes_outcome():
    splits, conv = small_splits(seed=2)
    a = train(splits, conv.match["train"], conv.mapping, fast_config(max_epochs=1, seed=0), SMALL_ENC)
    b = train(splits, conv.match["train"], conv.mapping, fast_config(max_epochs=1, seed=1), SMALL_ENC)
    assert a[1].epochs[0].train_loss != b[1].epochs[0].train_loss


def test_train_patience_stops_early():
    splits, conv = small_splits(seed=3)
    cfg = fast_config(max_epochs=50, patience=2, seed=0)
    params, history, _ = train(splits, conv.match["train"], conv.mapping, cfg, SMALL_ENC)
    if history.stopped_early:
        assert len(history.epochs) <= history.best_epoch + cfg.patience + 1
        assert len(history.epochs) < cfg.max_epochs
    else:
        assert len(history.epochs) == cfg.max_epochs


def test_train_requires_dev_split():
    splits, conv = small_splits(seed=0, n_dev=0)
    with pytest.raises(DataError, match="dev split required for early stopping"):
        train(splits, conv.match["train"], conv.mapping, fast_config(), SMALL_ENC)


def test_train_rejects_mismatched_matrix():
    splits, conv = small_splits(seed=0)
    bad = MatchMatrix(n=3, m=conv.mapping.m, pairs=np.empty((0, 2), dtype=np.int64))
    with pytest.raises(DataError, match="train split"):
        train(splits, bad, conv.mapping, fast_config(), SMALL_ENC)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises_with_history():
    splits, conv = small_splits(seed=0)
    cfg = fast_config(learning_rate=1e150, max_epochs=3)
    with pytest.raises(NumericalError) as excinfo:
        train(splits, conv.match["train"], conv.mapping, cfg, SMALL_ENC)
    assert isinstance(excinfo.value.history, TrainHistory)


def test_warmup_ramps_recorded_lr():
    splits, conv = small_splits(seed=0, n_train=40, n_dev=10, n_test=0)
    cfg = fast_config(max_epochs=2, warmup_steps=1000, learning_rate=1e-3)
    _, history, _ = train(splits, conv.match["train"], conv.mapping, cfg, SMALL_ENC)
    lrs = [r.lr for r in history.epochs]
    assert lrs[0] < 1e-3
    assert lrs == sorted(lrs)


def test_history_csv_format(tmp_path):
    history = TrainHistory(
        epochs=[EpochRecord(epoch=0, train_loss=0.5, dev_metric=0.75, lr=0.001)],
        best_epoch=0,
        best_dev_metric=0.75,
    )
    path = tmp_path / "history.csv"
    history.to_csv(path)
    assert path.read_text() == "epoch,train_loss,dev_metric,lr\n0,0.5,0.75,0.001\n"


# ---------------------------------------------------------------------------
# ablation


def test_ablation_config_variants():
    base = TrainConfig(weight_decay=0.05, l2_lf=0.2, noise_lambda=0.3, use_unlabeled=True)
    assert ablation_config(base, "full") == base
    assert ablation_config(base, "-weight_decay").weight_decay == 0.0
    assert ablation_config(base, "-l2").l2_lf == 0.0
    assert ablation_config(base, "-unlabeled").use_unlabeled is False
    assert ablation_config(base, "-noise").noise_lambda == 0.0
    basic = ablation_config(base, "basic")
    assert basic.weight_decay == 0.0
    assert basic.l2_lf == 0.0
    assert basic.noise_lambda == 0.0
    assert basic.use_unlabeled is False
    # untouched knobs carry over
    assert basic.learning_rate == base.learning_rate
    with pytest.raises(ConfigError):
        ablation_config(base, "-dropout")


def test_run_ablation_covers_all_variants():
    splits, conv = small_splits(seed=0, n_train=80, n_dev=24, n_test=24)
    table = run_ablation(
        splits, conv.match, conv.mapping,
        fast_config(max_epochs=2, patience=1), SMALL_ENC,
    )
    assert tuple(table.keys()) == VARIANT_ORDER
    for variant, row in table.items():
        assert set(row) == {"dev", "test"}
        assert 0.0 <= row["dev"] <= 1.0
        assert 0.0 <= row["test"] <= 1.0


def test_run_ablation_requires_test_gold():
    splits, conv = small_splits(seed=0, n_test=0)
    with pytest.raises(DataError, match="test split"):
        run_ablation(splits, conv.match, conv.mapping, fast_config(), SMALL_ENC)
