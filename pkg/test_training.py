import numpy as np
import pandas as pd
import pytest
from scipy.special import log_softmax as reference_log_softmax

from scripts.autograd import Tensor
from scripts.config import ModelConfig, TrainConfig
from scripts.data_collect import make_regression_table, make_separable_table
from scripts.data_loader import AttributeSpec, TableSchema, encode_rows, split
from scripts.errors import ContractError, MaskingError, NonFiniteLossError, OptimizerError
from scripts.hopular_model import HopularModel
from scripts.training import (EmaState, LambState, apply_mask, compute_loss, draw_mask_plan, ema_update,
                              evaluate_params, fit, gamma_schedule, inference_plan, lamb_step, train_step)

SMALL_MODEL = ModelConfig(embedding_dim=4, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0))


def _schema(n_features, target_kind="continuous", cardinality=0):
    features = tuple(AttributeSpec(f"x{j}", "continuous") for j in range(n_features))
    return TableSchema(features + (AttributeSpec("y", target_kind, cardinality, True),))


@pytest.fixture
def separable_views():
    return split(make_separable_table(n_samples=40, seed=0), (0.8, 0.1, 0.1), seed=0)


# ---------- che thuộc tính ----------

def test_without_masking_only_target_is_hidden(rng):
    schema = _schema(4)
    plan = draw_mask_plan(schema, 50, 0.0, 0.0, rng)
    assert np.array_equal(plan.masked, np.tile([False] * 4 + [True], (50, 1)))
    batch = apply_mask(schema, rng.standard_normal((50, 5)), None, plan)
    assert not batch.feature_positions.any() and batch.target_positions[:, 4].all()


def test_masking_everything(rng):
    schema = _schema(4)
    plan = draw_mask_plan(schema, 20, 1.0, 0.0, rng)
    assert plan.masked.all()
    batch = apply_mask(schema, rng.standard_normal((20, 5)), None, plan)
    assert batch.feature_positions[:, :4].all() and not batch.feature_positions[:, 4].any()


def test_mask_and_replace_rates(rng):
    schema = _schema(10)
    n = 10_000
    plan = draw_mask_plan(schema, n, 0.025, 0.175, rng, pool_size=n, query_index=np.arange(n))
    features = plan.actions[:, :10]
    assert abs(np.mean(features == 1) - 0.025) <= 0.005
    assert abs(np.mean(features == 2) - 0.175) <= 0.005
    rows, cols = np.nonzero(plan.replaced)
    donors = plan.donors[rows, cols]
    assert np.all(donors != rows) and donors.min() >= 0 and donors.max() < n


def test_replacement_needs_another_row(rng):
    with pytest.raises(MaskingError):
        draw_mask_plan(_schema(2), 1, 0.0, 1.0, rng, pool_size=1, query_index=[0])


def test_replacement_keeps_truth(rng):
    schema = _schema(3)
    pool = rng.standard_normal((6, 4))
    values = pool[:2].copy()
    plan = draw_mask_plan(schema, 2, 0.0, 1.0, rng, pool_size=6, query_index=[0, 1])
    batch = apply_mask(schema, values, None, plan, pool)
    assert np.array_equal(batch.truth, pool[:2])
    for b in range(2):
        for j in range(3):
            assert batch.inputs[b, j] == pool[plan.donors[b, j], j]
    assert batch.loss_mask.all()


def test_inference_plan_masks_target_only():
    plan = inference_plan(_schema(2), 3)
    assert plan.masked[:, 2].all() and not plan.masked[:, :2].any()


# ---------- gamma ----------

def test_gamma_schedule():
    assert gamma_schedule(0, 100) == 1.0
    assert gamma_schedule(50, 100) == pytest.approx(0.5, abs=1e-12)
    assert gamma_schedule(100, 100) == pytest.approx(0.0, abs=1e-12)
    values = [gamma_schedule(t, 100) for t in range(101)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert gamma_schedule(0, 100, start=0.5) == 0.5
    assert gamma_schedule(37, 100, start=0.3, kind="constant") == 0.3
    with pytest.raises(ContractError):
        gamma_schedule(101, 100)


# ---------- mất mát ----------

def test_loss_weighting():
    schema = _schema(1)
    truth = np.array([[0.0, 0.0]])
    preds = [Tensor([[np.sqrt(2.0)]]), Tensor([[2.0]])]
    positions = np.array([[True, False]]), np.array([[False, True]])
    loss = compute_loss(schema, preds, truth, *positions, 0.5)
    assert (loss.L_f, loss.L_t) == (pytest.approx(2.0), pytest.approx(4.0))
    assert loss.L == pytest.approx(3.0)
    assert compute_loss(schema, preds, truth, *positions, 1.0).L == pytest.approx(loss.L_f)
    assert compute_loss(schema, preds, truth, *positions, 0.0).L == pytest.approx(loss.L_t)


def test_classification_loss():
    schema = _schema(1, "categorical", 3)
    logits = np.array([[0.2, -1.0, 2.5], [1.0, 0.0, -0.5]])
    truth = np.array([[0.0, 2.0], [0.0, 0.0]])
    positions = np.zeros((2, 2), dtype=bool)
    target = np.array([[False, True], [False, True]])
    loss = compute_loss(schema, [Tensor(np.zeros((2, 1))), Tensor(logits)], truth, positions, target, 0.5)
    expected = -(reference_log_softmax(logits[0])[2] + reference_log_softmax(logits[1])[0]) / 2
    assert loss.L_t == pytest.approx(expected, abs=1e-12)
    assert loss.L_f == 0.0

    perfect = compute_loss(schema, [Tensor(np.zeros((1, 1))), Tensor([[1000.0, 0.0, 0.0]])],
                           np.array([[0.0, 0.0]]), np.zeros((1, 2), bool), np.array([[False, True]]), 0.0)
    assert perfect.L_t == 0.0


# ---------- LAMB / EMA ----------

def test_lamb_scalar_trace():
    w, g = {"w": np.array([2.0])}, {"w": np.array([0.5])}
    state = LambState.create(w, 0.1, (0.9, 0.999), 1e-6, 0.01)
    new, state = lamb_step(state, w, g)
    m_hat, v_hat = 0.05 / 0.1, 0.00025 / 0.001
    u = m_hat / (np.sqrt(v_hat) + 1e-6) + 0.01 * 2.0
    assert new["w"][0] == pytest.approx(2.0 - 0.1 * (2.0 / abs(u)) * u, abs=1e-12)
    assert new["w"][0] == pytest.approx(1.8, abs=1e-12)
    assert state.step == 1


def test_lamb_zero_gradient():
    w = {"w": np.array([1.0, -2.0])}
    zero = {"w": np.zeros(2)}
    new, _ = lamb_step(LambState.create(w, 0.1), w, zero)
    assert np.array_equal(new["w"], w["w"])
    decayed, _ = lamb_step(LambState.create(w, 0.1, weight_decay=0.1), w, zero)
    assert np.allclose(decayed["w"], 0.9 * w["w"], atol=1e-12)


def test_lamb_trust_ratio_is_clipped():
    w = {"w": np.array([100.0])}
    new, _ = lamb_step(LambState.create(w, 0.1), w, {"w": np.array([1.0])})
    assert new["w"][0] == pytest.approx(99.0, abs=1e-9)


def test_lamb_rejects_non_finite_gradient():
    w = {"a": np.ones(2), "b": np.ones(2)}
    with pytest.raises(OptimizerError) as excinfo:
        lamb_step(LambState.create(w, 0.1), w, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
    assert excinfo.value.parameter == "b"


def test_ema():
    fast = {"w": np.array([1.0, 3.0])}
    assert np.array_equal(ema_update(EmaState({"w": np.zeros(2)}, 1.0), fast).slow["w"], fast["w"])

    state = EmaState({"w": np.zeros(1)}, 0.005)
    for _ in range(1000):
        state = ema_update(state, {"w": np.ones(1)})
    assert 1.0 - state.slow["w"][0] == pytest.approx((1 - 0.005) ** 1000, rel=1e-9)
    assert 1.0 - state.slow["w"][0] == pytest.approx(0.0067, abs=2e-4)

    every_other = EmaState({"w": np.zeros(1)}, 1.0, k=2)
    every_other = ema_update(every_other, {"w": np.ones(1)})
    assert every_other.slow["w"][0] == 0.0
    assert ema_update(every_other, {"w": np.ones(1)}).slow["w"][0] == 1.0


# ---------- vòng lặp huấn luyện ----------

def test_zero_learning_rate_keeps_initial_weights(separable_views):
    model = HopularModel(separable_views.dataset.schema, SMALL_MODEL)
    result = fit(model, separable_views, TrainConfig(learning_rate=0.0, epochs=3, patience=3), seed=11)
    initial = model.init_params(np.random.default_rng(11))
    assert all(np.array_equal(result.params[k], initial[k]) for k in initial)
    assert result.history["val_loss"].nunique() == 1


def test_fit_is_deterministic(separable_views, tmp_path):
    model = HopularModel(separable_views.dataset.schema, SMALL_MODEL)
    config = TrainConfig(epochs=4, patience=4)
    first = fit(model, separable_views, config, seed=3, history_file=tmp_path / "a.jsonl")
    second = fit(model, separable_views, config, seed=3, history_file=tmp_path / "b.jsonl")
    pd.testing.assert_frame_equal(first.history, second.history, check_exact=True)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    history = pd.read_json(tmp_path / "a.jsonl", lines=True)
    assert {"epoch", "gamma", "L_f", "L_t", "L", "val_loss"} <= set(history.columns)
    assert len(history) == 4


def test_history_file_keeps_objective_weighting(separable_views, tmp_path):
    model = HopularModel(separable_views.dataset.schema, SMALL_MODEL)
    config = TrainConfig(mask_prob=0.2, replace_prob=0.2, epochs=5, patience=5, gamma_start=0.5)
    result = fit(model, separable_views, config, seed=4, history_file=tmp_path / "history.jsonl")
    history = pd.read_json(tmp_path / "history.jsonl", lines=True, precise_float=True)
    assert len(history) == 5
    for column in ("gamma", "L_f", "L_t", "L", "val_loss"):
        assert np.allclose(history[column], result.history[column], rtol=1e-14, atol=1e-14), column
    mixed = history["gamma"] * history["L_f"] + (1.0 - history["gamma"]) * history["L_t"]
    assert np.max(np.abs(mixed - history["L"])) <= 1e-12


def test_training_loss_decreases(separable_views):
    model = HopularModel(separable_views.dataset.schema, SMALL_MODEL)
    config = TrainConfig(mask_prob=0.0, replace_prob=0.0, learning_rate=0.01, weight_decay=0.0,
                         epochs=100, patience=100, gamma_start=0.0, gamma_schedule="constant")
    history = fit(model, separable_views, config, seed=0).history
    assert history["L"].iloc[-1] < history["L"].iloc[0]


def test_early_stopping_returns_best_slow_weights(separable_views):
    model = HopularModel(separable_views.dataset.schema, SMALL_MODEL)
    result = fit(model, separable_views, TrainConfig(learning_rate=0.05, epochs=30, patience=3), seed=2)
    history = result.history
    assert result.best_epoch == int(history["val_loss"].idxmin())
    assert result.stopped_epoch == int(history["epoch"].iloc[-1])
    assert result.best_val_loss == history["val_loss"].min()

    dataset = separable_views.dataset
    train_values, train_missing = encode_rows(dataset, separable_views.train)
    val_values, val_missing = encode_rows(dataset, separable_views.val)
    val_loss, _ = evaluate_params(model, result.params, train_values, train_missing, val_values, val_missing)
    assert val_loss == result.best_val_loss


def test_non_finite_loss_carries_snapshot():
    views = split(make_regression_table(n_samples=30, seed=0), (0.8, 0.1, 0.1))
    model = HopularModel(views.dataset.schema, ModelConfig(embedding_dim=2, n_blocks=1, n_heads=1,
                                                           dropout=(0.0, 0.0, 0.0)))
    rng = np.random.default_rng(0)
    params = model.init_params(rng)
    params[f"summary/b/{model.schema.target_index}"] = np.array([np.inf])
    config = TrainConfig()
    values, missing = encode_rows(views.dataset, views.train)
    with pytest.raises(NonFiniteLossError) as excinfo:
        train_step(model, params, LambState.create(params, 0.001), EmaState(dict(params), 0.005),
                   values, missing, np.arange(len(values)), 0.5, config, rng, epoch=7)
    assert excinfo.value.snapshot["epoch"] == 7
    assert "param_norms" in excinfo.value.snapshot


def test_separable_table_is_learned():
    views = split(make_separable_table(n_samples=40, seed=0), (0.5, 0.25, 0.25), seed=0)
    model = HopularModel(views.dataset.schema, SMALL_MODEL)
    config = TrainConfig(mask_prob=0.0, replace_prob=0.0, learning_rate=0.01, weight_decay=0.0,
                         epochs=300, patience=300)
    result = fit(model, views, config, seed=0)
    dataset = views.dataset
    train_values, train_missing = encode_rows(dataset, views.train)
    val_values, val_missing = encode_rows(dataset, views.val)
    _, logits = evaluate_params(model, result.params, train_values, train_missing, val_values, val_missing)
    labels = val_values[:, dataset.schema.target_index].astype(int)
    assert np.mean(logits.argmax(axis=1) == labels) == 1.0
