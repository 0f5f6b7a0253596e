from dataclasses import replace

import numpy as np
import pytest

from scripts.autograd import Tensor
from scripts.config import ModelConfig
from scripts.data_loader import AttributeSpec, TableSchema, encode_rows
from scripts.errors import ConfigurationError, ContractError, EncodingError
from scripts.hopfield import PatternMemory, update
from scripts.hopular_model import (HopularModel, block_forward, build_memory, embed_sample, forward,
                                   hf_module_forward, hs_attention, hs_head_forward, hs_module_forward, predict,
                                   summarize)
from scripts.training import model_gradcheck


def _setup(dataset, config, seed=0):
    model = HopularModel(dataset.schema, config)
    params = model.init_params(np.random.default_rng(seed))
    values, missing = encode_rows(dataset, np.arange(dataset.n_rows))
    return model, params, values, missing


def _target_mask(model, n):
    masked = np.zeros((n, model.d), dtype=bool)
    masked[:, model.schema.target_index] = True
    return masked


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


@pytest.mark.parametrize("e, L, M", [(4, 1, 2), (2, 2, 3), (3, 0, 1)])
def test_forward_output_shapes(toy_dataset, e, L, M):
    config = ModelConfig(embedding_dim=e, n_blocks=L, n_heads=M, dropout=(0.0, 0.0, 0.0))
    model, params, values, missing = _setup(toy_dataset, config)
    P = model.tensors(params)
    memory = build_memory(model, P, values, missing)
    outputs = forward(model, P, values, _target_mask(model, 4), memory, missing)
    assert [o.shape for o in outputs] == [(4, 3), (4, 1), (4, 2)]


def test_heads_must_divide_width(toy_dataset):
    with pytest.raises(ConfigurationError):
        HopularModel(toy_dataset.schema, ModelConfig(embedding_dim=4, n_heads=5))


def test_zero_parameters_embed_to_zero(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    P = model.tensors({k: np.zeros_like(v) for k, v in params.items()})
    xi, _ = embed_sample(model, P, values, _target_mask(model, 4), missing)
    assert np.array_equal(xi.data, np.zeros((4, model.D)))


def test_embedding_is_sum_of_parts(rng):
    schema = TableSchema((AttributeSpec("c", "categorical", 3), AttributeSpec("y", "continuous", is_target=True)))
    model = HopularModel(schema, ModelConfig(embedding_dim=3, n_heads=1))
    params = model.init_params(rng)
    P = model.tensors(params)
    xi, _ = embed_sample(model, P, [[1.0, 0.5]], [[False, True]])
    expected0 = params["embed/value/0"][1] + params["embed/pos"][0] + params["embed/type"][0]
    expected1 = params["embed/mask/1"] + params["embed/pos"][1] + params["embed/type"][2]
    assert np.allclose(xi.data[0, :3], expected0, atol=1e-15)
    assert np.allclose(xi.data[0, 3:], expected1, atol=1e-15)

    shown, _ = embed_sample(model, P, [[1.0, 0.5]], [[False, False]])
    value1 = 0.5 * params["embed/scale/1"] + params["embed/bias/1"] + params["embed/pos"][1] + params["embed/type"][2]
    assert np.allclose(shown.data[0, 3:], value1, atol=1e-15)


def test_masked_target_hides_label(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    P = model.tensors(params)
    flipped = values.copy()
    flipped[:, 2] = 1 - flipped[:, 2]
    a, _ = embed_sample(model, P, values, _target_mask(model, 4), missing)
    b, _ = embed_sample(model, P, flipped, _target_mask(model, 4), missing)
    assert np.array_equal(a.data, b.data)


def test_unknown_category_index(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    bad = values.copy()
    bad[0, 0] = 4
    with pytest.raises(EncodingError):
        embed_sample(model, model.tensors(params), bad, _target_mask(model, 4), missing)


def test_hs_head_with_identity_weights_is_hopfield_update(rng):
    X, xi, beta = rng.standard_normal((4, 5)), rng.standard_normal(4), 0.7
    eye = Tensor(np.eye(4))
    out = hs_head_forward(eye, eye, eye, Tensor(xi), Tensor(X), beta).data
    assert np.max(np.abs(out - update(PatternMemory(X, beta), xi))) < 1e-12


def test_hs_head_single_pattern_and_empty_memory(rng):
    W_xi, W_X, W_S = rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), rng.standard_normal((4, 3))
    x1 = rng.standard_normal((4, 1))
    out = hs_head_forward(Tensor(W_xi), Tensor(W_X), Tensor(W_S), Tensor(rng.standard_normal(4)), Tensor(x1), 1.0)
    assert np.allclose(out.data, (W_S @ W_X @ x1).ravel(), atol=1e-12)
    with pytest.raises(ContractError):
        hs_head_forward(Tensor(W_xi), Tensor(W_X), Tensor(W_S), Tensor(np.zeros(4)), Tensor(np.zeros((4, 0))), 1.0)


def _hs_oracle(model, params, xi, columns_of):
    out = []
    for b in range(xi.shape[0]):
        heads = [hs_head_forward(Tensor(params["block0/hs/W_xi"][m]), Tensor(params["block0/hs/W_X"][m]),
                                 Tensor(params["block0/hs/W_S"][m]), Tensor(xi[b]), Tensor(columns_of(b)),
                                 model.beta_eff).data
                 for m in range(model.M)]
        out.append(params["block0/hs/W_G"] @ np.concatenate(heads))
    return np.array(out)


def test_hs_module_matches_per_sample_heads(toy_dataset):
    config = ModelConfig(embedding_dim=2, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0))
    model, params, values, missing = _setup(toy_dataset, config)
    P = model.tensors(params)
    memory = build_memory(model, P, values, missing)
    xi, _ = embed_sample(model, P, values, _target_mask(model, 4), missing)
    out = hs_module_forward(model, P, 0, xi, memory).data
    assert np.max(np.abs(out - _hs_oracle(model, params, xi.data, lambda b: memory.columns()))) < 1e-12


@pytest.mark.parametrize("drop_self", [False, True])
def test_hs_module_training_memory(toy_dataset, drop_self):
    config = ModelConfig(embedding_dim=2, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0), drop_self_column=drop_self)
    model, params, values, missing = _setup(toy_dataset, config)
    P = model.tensors(params)
    query_index = np.array([2, 0, 3])
    query_mask = np.array([[True, False, True], [False, True, True], [True, True, True]])
    memory = build_memory(model, P, values, missing, mode="train", query_index=query_index, query_mask=query_mask)
    xi, _ = embed_sample(model, P, values[query_index], query_mask, missing[query_index])
    out = hs_module_forward(model, P, 0, xi, memory).data
    if drop_self:
        columns_of = lambda b: np.delete(memory.stored.data, query_index[b], axis=0).T
    else:
        columns_of = memory.columns
    assert np.max(np.abs(out - _hs_oracle(model, params, xi.data, columns_of))) < 1e-12


def test_hs_single_network_with_identity_weights(toy_dataset):
    config = ModelConfig(embedding_dim=2, n_blocks=1, n_heads=1, dropout=(0.0, 0.0, 0.0))
    model, params, values, missing = _setup(toy_dataset, config)
    eye = np.eye(model.D)
    for name in ("W_xi", "W_X", "W_S"):
        params[f"block0/hs/{name}"] = eye[None]
    params["block0/hs/W_G"] = eye
    P = model.tensors(params)
    memory = build_memory(model, P, values, missing)
    xi, _ = embed_sample(model, P, values, _target_mask(model, 4), missing)
    out = hs_module_forward(model, P, 0, xi, memory).data
    mem = PatternMemory(memory.columns(), model.beta_eff)
    for b in range(4):
        assert np.max(np.abs(out[b] - update(mem, xi.data[b]))) < 1e-12


def test_hf_identity_weights_retrieve_from_own_attributes(toy_dataset, rng):
    config = ModelConfig(embedding_dim=2, n_blocks=1, n_heads=1, dropout=(0.0, 0.0, 0.0))
    model, params, _, _ = _setup(toy_dataset, config)
    pad = np.zeros((model.h, model.e))
    pad[:model.e] = np.eye(model.e)
    params["block0/hf/W_Xi"] = pad[None]
    params["block0/hf/W_Y"] = pad[None]
    params["block0/hf/W_F"] = pad.T[None]
    params["block0/hf/W_G"] = np.eye(model.e)
    Xi, Y = rng.standard_normal((2, model.d, model.e)), rng.standard_normal((2, model.d, model.e))
    out = hf_module_forward(model, model.tensors(params), 0, Tensor(Xi), Tensor(Y)).data
    for b in range(2):
        mem = PatternMemory(Y[b].T, model.beta_eff)
        for i in range(model.d):
            assert np.max(np.abs(out[b, i] - update(mem, Xi[b, i]))) < 1e-12


def test_hf_module_matches_column_loop(toy_dataset, rng):
    config = ModelConfig(embedding_dim=2, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0))
    model, params, _, _ = _setup(toy_dataset, config)
    Xi, Y = rng.standard_normal((3, model.d, model.e)), rng.standard_normal((3, model.d, model.e))
    out = hf_module_forward(model, model.tensors(params), 0, Tensor(Xi), Tensor(Y)).data
    W_Xi, W_Y, W_F, W_G = (params[f"block0/hf/{n}"] for n in ("W_Xi", "W_Y", "W_F", "W_G"))
    for b in range(3):
        for i in range(model.d):
            heads = []
            for m in range(model.M):
                keys = Y[b] @ W_Y[m].T
                p = _softmax(model.beta_eff * keys @ (W_Xi[m] @ Xi[b, i]))
                heads.append(W_F[m] @ (keys.T @ p))
            assert np.max(np.abs(out[b, i] - W_G @ np.concatenate(heads))) < 1e-12


def test_block_is_identity_without_module_output(toy_dataset, small_config, rng):
    model, params, values, missing = _setup(toy_dataset, small_config)
    zeroed = dict(params, **{"block0/hs/W_G": np.zeros_like(params["block0/hs/W_G"]),
                             "block0/hf/W_G": np.zeros_like(params["block0/hf/W_G"])})
    P = model.tensors(zeroed)
    memory = build_memory(model, P, values, missing)
    xi, Y = embed_sample(model, P, values, _target_mask(model, 4), missing)
    assert np.array_equal(block_forward(model, P, 0, xi, Y, memory).data, xi.data)

    outputs = forward(model, P, values, _target_mask(model, 4), memory, missing)
    expected = summarize(model, P, xi)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(outputs, expected))

    dropped = HopularModel(toy_dataset.schema, replace(small_config, dropout=(0.0, 1.0, 0.0)))
    P = dropped.tensors(params)
    memory = build_memory(dropped, P, values, missing)
    xi, Y = embed_sample(dropped, P, values, _target_mask(dropped, 4), missing)
    assert np.array_equal(block_forward(dropped, P, 0, xi, Y, memory, training=True, rng=rng).data, xi.data)


def test_without_blocks_forward_is_summary_of_embedding(toy_dataset):
    config = ModelConfig(embedding_dim=4, n_blocks=0, n_heads=2, dropout=(0.0, 0.0, 0.0))
    model, params, values, missing = _setup(toy_dataset, config)
    P = model.tensors(params)
    xi, _ = embed_sample(model, P, values, _target_mask(model, 4), missing)
    outputs = forward(model, P, values, _target_mask(model, 4), build_memory(model, P, values, missing), missing)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(outputs, summarize(model, P, xi)))


def test_build_memory_contracts(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    P = model.tensors(params)
    with pytest.raises(ContractError):
        build_memory(model, P, values, missing, mode="train", query_index=[4], query_mask=np.ones((1, 3), bool))
    with pytest.raises(ContractError):
        build_memory(model, P, values[:0], missing[:0])

    all_masked = np.ones((1, 3), dtype=bool)
    memory = build_memory(model, P, values, missing, mode="train", query_index=[1], query_mask=all_masked)
    expected, _ = embed_sample(model, P, values[[1]], all_masked, missing[[1]])
    assert np.array_equal(memory.self_stored.data, expected.data)

    changed = dict(params, **{"embed/pos": params["embed/pos"] + 1.0})
    assert not np.array_equal(build_memory(model, model.tensors(changed), values, missing).stored.data,
                              build_memory(model, P, values, missing).stored.data)


def test_attention_sharpens_with_beta(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    entropies = []
    for scale in (1.0, 10.0, 100.0, 1000.0):
        scaled = HopularModel(toy_dataset.schema, replace(small_config, beta_scale=scale))
        P = scaled.tensors(params)
        memory = build_memory(scaled, P, values, missing)
        xi, _ = embed_sample(scaled, P, values, _target_mask(scaled, 4), missing)
        weights = hs_attention(scaled, P, 0, xi, memory)[0].data
        assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-12
        entropies.append(-np.sum(weights * np.log(np.clip(weights, 1e-300, None)), axis=-1))
    for lower, higher in zip(entropies, entropies[1:]):
        assert np.all(higher <= lower + 1e-12)


def test_predict_is_deterministic(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    again = HopularModel(toy_dataset.schema, small_config).init_params(np.random.default_rng(0))
    first = predict(model, params, values, missing, values, missing)
    second = predict(model, again, values, missing, values, missing)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert [p.shape for p in first] == [(4, 3), (4, 1), (4, 2)]


def test_model_gradient_check_on_toy_table(toy_dataset, small_config):
    model, params, values, missing = _setup(toy_dataset, small_config)
    errors = model_gradcheck(model, params, values, missing, seed=0)
    assert set(errors) == set(params)
    assert max(errors.values()) < 1e-4
