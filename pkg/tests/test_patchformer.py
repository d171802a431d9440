import math

import numpy as np
import pytest

from src.diffkit import as_tensor, finite_diff_check, mean, square, sum_, swish
from src.exception import ContractError
from src.models.heads import HeadSpec, head_forward
from src.models.patchformer import (
    Frequency, PatchformerSpec, attention, attention_weights, choose_patch_size,
    embed_patches, init_params, patch_embed, patchformer_forward,
    positional_encoding, positional_encoding_table, select_patch_sizes, swiglu_ffn,
    transformer_block,
)


@pytest.mark.parametrize("freq,sizes", [("monthly", [8, 16, 32]), ("yearly", [8]), ("hourly", [32, 64])])
def test_patch_size_table(freq, sizes):
    assert select_patch_sizes(freq) == sizes
    assert select_patch_sizes(Frequency(freq)) == sizes


def test_choose_patch_size():
    assert choose_patch_size([16, 32], 64) == 32
    assert choose_patch_size([16, 32], 50) == 32
    assert choose_patch_size([32, 64], 20) == 32
    assert choose_patch_size([8, 16, 32], 48) == 16


def test_positional_encoding_values():
    assert positional_encoding(0, 0, 4) == 0.0
    assert positional_encoding(0, 1, 4) == 1.0
    assert positional_encoding(1, 0, 4) == pytest.approx(0.841471, abs=1e-6)
    with pytest.raises(ContractError):
        positional_encoding(0, 4, 4)
    table = positional_encoding_table(20, 8)
    assert np.all(np.abs(table) <= 1.0)
    assert table[3, 5] == pytest.approx(positional_encoding(3, 5, 8))


def _embed_params(patch, d_model, value=0.0):
    return {"embed.weight": np.full((patch, d_model), value), "embed.bias": np.zeros(d_model)}


def test_patch_embed_token_counts():
    assert patch_embed(np.ones(64), 16, _embed_params(16, 4, 0.1)).shape == (4, 4)
    assert patch_embed(np.ones(50), 16, _embed_params(16, 4, 0.1)).shape == (4, 4)


def test_zero_projection_leaves_positional_encoding():
    tokens = patch_embed(np.zeros(64), 16, _embed_params(16, 6))
    np.testing.assert_array_equal(tokens.data, positional_encoding_table(4, 6))


def test_padding_repeats_first_value():
    # with a sum-projection, the padded first token is 14 copies of 5 plus the first two points
    series = np.concatenate([[5.0, 1.0], np.zeros(48)])
    params = {"embed.weight": np.ones((16, 1)), "embed.bias": np.zeros(1)}
    tokens = embed_patches(series[None, :], 16, params).data[0, :, 0] - positional_encoding_table(4, 1)[:, 0]
    assert tokens[0] == pytest.approx(14 * 5.0 + 5.0 + 1.0)


def test_empty_series_is_rejected():
    with pytest.raises(ContractError):
        patch_embed(np.zeros(0), 16, _embed_params(16, 4))


def test_attention_examples():
    assert attention(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))).data[0, 0] == pytest.approx(1.0)
    out = attention(np.zeros((1, 1)), np.zeros((2, 1)), np.array([[1.0], [3.0]]))
    assert out.data[0, 0] == pytest.approx(2.0)


def test_attention_rows_are_convex_combinations(rng):
    q, k, v = rng.normal(size=(5, 3)), rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    w = attention_weights(q, k)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=1e-12)
    out = attention(q, k, v).data
    assert np.all(out >= v.min(axis=0) - 1e-12)
    assert np.all(out <= v.max(axis=0) + 1e-12)


def _ffn_params(rng, d=4, f=6, zero_bias=False):
    return {
        "ffn.w1": rng.normal(size=(d, f)),
        "ffn.b1": np.zeros(f) if zero_bias else rng.normal(size=f),
        "ffn.w3": rng.normal(size=(d, f)),
        "ffn.b3": np.zeros(f) if zero_bias else rng.normal(size=f),
        "ffn.w2": rng.normal(size=(f, d)),
    }


def test_swiglu_zero_input(rng):
    out = swiglu_ffn(np.zeros(4), _ffn_params(rng, zero_bias=True))
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_swish_value():
    assert swish(as_tensor(1.0)).item() == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)
    assert swish(as_tensor(1.0)).item() == pytest.approx(0.731059, abs=1e-6)


def test_swiglu_gradient(rng):
    x = rng.normal(size=4)
    report = finite_diff_check(lambda p: sum_(square(swiglu_ffn(x, p))), _ffn_params(rng))
    assert report.within(rtol=1e-4, atol=1e-9)


def test_block_gradient_on_two_tokens(rng):
    spec = PatchformerSpec(d_model=4, n_heads=2, n_layers=1, ffn_hidden=4, patch_size=2, lookback=4,
                           dropout_rate=0.0)
    head = HeadSpec("mse")
    params = init_params(spec, head, seed=0)
    batch = rng.normal(size=(1, 4))

    def loss(p):
        tokens = embed_patches(batch, spec.patch_size, p)
        return sum_(square(transformer_block(tokens, p, spec, 0)))

    assert finite_diff_check(loss, params).within(rtol=1e-4, atol=1e-8)


def test_forward_shapes_and_full_model_gradient(rng):
    spec = PatchformerSpec(d_model=4, n_heads=2, ffn_hidden=4, patch_size=4, lookback=6, dropout_rate=0.0)
    head = HeadSpec("gaussian_nll")
    params = init_params(spec, head, seed=1)
    batch = rng.normal(size=(2, 6))
    assert patchformer_forward(params, batch, spec).shape == (2, 4)

    def loss(p):
        return mean(square(head_forward(p, patchformer_forward(p, batch, spec), head)))

    assert finite_diff_check(loss, params).within(rtol=1e-4, atol=1e-8)


def test_patchformer_dimensions_are_validated():
    with pytest.raises(ContractError):
        PatchformerSpec(d_model=6, n_heads=4)
    with pytest.raises(ContractError):
        PatchformerSpec(d_model=5, n_heads=1)
    assert PatchformerSpec(d_model=16, n_heads=2).d_k == 8
