import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loramix import numerics as nx
from loramix.decoder import (
    FULL_SCALE,
    DecoderConfig,
    DecoderModel,
    KVCache,
    apply_fractional_rope,
    kv_cache_elements,
    peak_lr,
)
from loramix.errors import AlignmentError, CapacityError, ConfigurationError, DomainError
from loramix.numerics import Tensor
from loramix.training import Adam

SMALL = DecoderConfig(d_model=32, n_layers=2, n_q_heads=4, n_kv_heads=2, vocab_size=40, max_context=64, seed=3)


def randomize_biases(model, seed=0):
    """Default biases are zero; give them values so tests exercise them."""
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".bias") or name.endswith(".gain"):
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)


# -- independent oracles ---------------------------------------------------------


def rope_oracle(vec, pos, rotary_dims, base=10000.0):
    """Rotate one head vector using complex multiplication."""
    out = np.array(vec, dtype=np.float64)
    half = rotary_dims // 2
    z = out[0:rotary_dims:2] + 1j * out[1:rotary_dims:2]
    z = z * np.exp(1j * pos * base ** (-2.0 * np.arange(half) / rotary_dims))
    out[0:rotary_dims:2], out[1:rotary_dims:2] = z.real, z.imag
    return out


def mha_oracle(model, x, layer):
    """Plain multi-head causal attention, one head and one query at a time."""
    cfg = model.config
    p = model.params
    pre = f"layers.{layer}.attn"
    proj = {n: x @ p[f"{pre}.{n}.weight"].data.T + p[f"{pre}.{n}.bias"].data for n in "qkv"}
    hd, t = cfg.head_dim, x.shape[0]
    ctx = np.zeros((t, cfg.n_q_heads * hd))
    for h in range(cfg.n_q_heads):
        kvh = h // cfg.group_size
        for i in range(t):
            q = rope_oracle(proj["q"][i, h * hd:(h + 1) * hd], i, cfg.rotary_dims)
            scores = []
            for j in range(i + 1):
                k = rope_oracle(proj["k"][j, kvh * hd:(kvh + 1) * hd], j, cfg.rotary_dims)
                scores.append(q @ k / math.sqrt(hd))
            w = np.exp(np.array(scores) - max(scores))
            w /= w.sum()
            ctx[i, h * hd:(h + 1) * hd] = sum(w[j] * proj["v"][j, kvh * hd:(kvh + 1) * hd] for j in range(i + 1))
    return ctx @ p[f"{pre}.o.weight"].data.T + p[f"{pre}.o.bias"].data


# -- attention ---------------------------------------------------------------------


@pytest.mark.parametrize("n_heads", [1, 2, 4])
def test_gqa_with_one_query_per_kv_head_matches_mha(n_heads):
    cfg = replace(SMALL, n_q_heads=n_heads, n_kv_heads=n_heads)
    model = DecoderModel(cfg)
    randomize_biases(model)
    x = np.random.default_rng(n_heads).standard_normal((9, cfg.d_model))
    got = model.attention(Tensor(x), 0, np.arange(9)).data
    assert np.abs(got - mha_oracle(model, x, 0)).max() <= 1e-9


def test_gqa_grouping_matches_oracle():
    model = DecoderModel(SMALL)
    randomize_biases(model, 1)
    x = np.random.default_rng(9).standard_normal((7, SMALL.d_model))
    got = model.attention(Tensor(x), 1, np.arange(7)).data
    assert np.abs(got - mha_oracle(model, x, 1)).max() <= 1e-9


def test_batched_attention_matches_per_sequence():
    model = DecoderModel(SMALL)
    x = np.random.default_rng(2).standard_normal((3, 5, SMALL.d_model))
    batched = model.attention(Tensor(x), 0, np.arange(5)).data
    for b in range(3):
        single = model.attention(Tensor(x[b]), 0, np.arange(5)).data
        assert np.abs(batched[b] - single).max() <= 1e-12


def test_single_token_attention_is_value_projection():
    model = DecoderModel(SMALL)
    randomize_biases(model, 2)
    p = model.params
    x = np.random.default_rng(5).standard_normal((1, SMALL.d_model))
    v = x @ p["layers.0.attn.v.weight"].data.T + p["layers.0.attn.v.bias"].data
    heads = v.reshape(SMALL.n_kv_heads, SMALL.head_dim)
    ctx = np.repeat(heads, SMALL.group_size, axis=0).reshape(1, -1)
    want = ctx @ p["layers.0.attn.o.weight"].data.T + p["layers.0.attn.o.bias"].data
    got = model.attention(Tensor(x), 0, np.arange(1)).data
    assert np.abs(got - want).max() <= 1e-12


def test_kv_cache_decoding_matches_batched_forward_over_32_steps():
    model = DecoderModel(SMALL)
    randomize_biases(model, 3)
    tokens = np.random.default_rng(4).integers(0, SMALL.vocab_size, 32)
    full = model.forward(tokens).data
    cache = KVCache(SMALL)
    worst = 0.0
    for i, tok in enumerate(tokens):
        step = model.decode_step(tok, cache)
        assert cache.length == i + 1
        worst = max(worst, np.abs(step - full[i]).max())
    assert worst <= 1e-9


def test_kv_cache_prefix_then_steps():
    model = DecoderModel(SMALL)
    tokens = np.arange(20) % SMALL.vocab_size
    full = model.forward(tokens).data
    cache = KVCache(SMALL)
    first = model.forward(tokens[:12], cache=cache).data
    assert np.abs(first - full[:12]).max() <= 1e-9
    for i in range(12, 20):
        assert np.abs(model.decode_step(tokens[i], cache) - full[i]).max() <= 1e-9


def test_kv_cache_capacity():
    model = DecoderModel(SMALL)
    cache = KVCache(SMALL, capacity=3)
    for t in range(3):
        model.decode_step(t, cache)
    with pytest.raises(CapacityError):
        model.decode_step(0, cache)
    assert cache.length == 3
    with pytest.raises(CapacityError):
        model.forward(np.zeros(SMALL.max_context + 1, dtype=int))


def test_kv_cache_size_ratio_for_grouped_heads():
    mha = replace(FULL_SCALE, n_kv_heads=24)
    assert kv_cache_elements(FULL_SCALE, 1000) * 3 == kv_cache_elements(mha, 1000)
    cfg = DecoderConfig(d_model=96, n_layers=1, n_q_heads=24, n_kv_heads=8, rotary_fraction=0.5, max_context=10)
    cache = KVCache(cfg)
    assert cache.keys.shape == (1, 10, 8, 4)
    assert cache.num_elements * 3 == KVCache(replace(cfg, n_kv_heads=24)).num_elements


# -- rotary --------------------------------------------------------------------------


def test_rope_position_zero_is_identity():
    x = np.random.default_rng(0).standard_normal((1, 3, 16))
    np.testing.assert_array_equal(apply_fractional_rope(x, [0], 12).data, x)


def test_rope_pass_through_dims_for_full_scale_heads():
    assert FULL_SCALE.head_dim == 128 and FULL_SCALE.rotary_dims == 96
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 2, 128))
    positions = rng.integers(0, 131072, 50)
    out = apply_fractional_rope(x, positions, FULL_SCALE.rotary_dims).data
    np.testing.assert_array_equal(out[..., 96:], x[..., 96:])
    assert not np.allclose(out[1:, :, :96], x[1:, :, :96])


def test_rope_matches_complex_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3, 16))
    pos = rng.integers(0, 1000, 6)
    out = apply_fractional_rope(x, pos, 12).data
    for t in range(6):
        for h in range(3):
            assert np.abs(out[t, h] - rope_oracle(x[t, h], pos[t], 12)).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(p=st.integers(0, 5000), q=st.integers(0, 5000), s=st.integers(-5000, 5000), seed=st.integers(0, 2**16))
def test_rope_relative_shift_invariance(p, q, s, seed):
    if p + s < 0 or q + s < 0:
        s = -min(p, q)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((1, 1, 128)), rng.standard_normal((1, 1, 128))

    def dot(pa, pb):
        ra = apply_fractional_rope(a, [pa], 96).data[..., :96]
        rb = apply_fractional_rope(b, [pb], 96).data[..., :96]
        return float((ra * rb).sum())

    assert abs(dot(p, q) - dot(p + s, q + s)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_rope_preserves_norm(pos):
    x = np.random.default_rng(pos % 97).standard_normal((1, 2, 32))
    out = apply_fractional_rope(x, [pos], 24).data
    assert abs(np.linalg.norm(out) - np.linalg.norm(x)) <= 1e-9


def test_rope_gradient():
    rng = np.random.default_rng(3)
    pos = rng.integers(0, 50, 4)
    assert nx.gradcheck(lambda x: apply_fractional_rope(x, pos, 6), [rng.standard_normal((4, 2, 8))]) <= 1e-6


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DecoderConfig(d_model=30, n_q_heads=4)
    with pytest.raises(ConfigurationError):
        DecoderConfig(n_q_heads=8, n_kv_heads=3)
    with pytest.raises(ConfigurationError):
        DecoderConfig(rotary_fraction=1.5)
    with pytest.raises(ConfigurationError):
        DecoderConfig(d_model=24, n_q_heads=4, rotary_fraction=0.5)  # 3 rotary dims
    with pytest.raises(ConfigurationError):
        apply_fractional_rope(np.ones((2, 1, 4)), [0, 1], 3)


# -- forward ------------------------------------------------------------------------


def test_zero_output_projections_reduce_to_tied_unembedding():
    model = DecoderModel(SMALL)
    for name, p in model.params.items():
        if ".attn.o." in name or ".mlp.out." in name:
            p.data = np.zeros_like(p.data)
    tokens = np.array([3, 1, 4, 1, 5])
    e = model.params["embed"].data
    h = e[tokens]
    h = (h - h.mean(-1, keepdims=True)) / np.sqrt(h.var(-1, keepdims=True) + 1e-5)
    assert np.abs(model.forward(tokens).data - h @ e.T).max() <= 1e-12


def test_embedding_is_tied_to_unembedding():
    model = DecoderModel(SMALL)
    tokens = np.array([0, 1, 2])
    before = model.forward(tokens).data
    model.params["embed"].data[7] += 5.0  # row 7 is never an input token here
    after = model.forward(tokens).data
    assert model.embedding is model.params["embed"]
    changed = np.nonzero(np.abs(after - before).max(axis=0) > 0)[0]
    assert list(changed) == [7]


def test_forward_is_deterministic_and_finite():
    model = DecoderModel(SMALL)
    tokens = np.arange(10)
    a, b = model.forward(tokens).data, model.forward(tokens).data
    assert np.array_equal(a, b) and np.all(np.isfinite(a))
    assert np.array_equal(DecoderModel(SMALL).forward(tokens).data, a)


def test_argmax_invariant_under_final_gain_scaling():
    model = DecoderModel(SMALL)
    tokens = np.random.default_rng(6).integers(0, SMALL.vocab_size, 12)
    base = model.forward(tokens).data.argmax(-1)
    for scale in (0.01, 0.5, 3.0, 100.0):
        model.params["final_norm.gain"].data = np.full(SMALL.d_model, scale)
        assert np.array_equal(model.forward(tokens).data.argmax(-1), base)


def test_injected_spans_must_align_with_placeholders():
    model = DecoderModel(SMALL)
    model.placeholder_ids = frozenset({5})
    tokens = np.array([1, 5, 5, 2])
    rows = Tensor(np.ones((2, SMALL.d_model)))
    out = model.forward(tokens, injected=[(1, rows)]).data
    assert not np.array_equal(out, model.forward(tokens).data)
    with pytest.raises(AlignmentError):
        model.forward(tokens, injected=[(0, rows)])
    with pytest.raises(AlignmentError):
        model.forward(tokens, injected=[(3, rows)])
    with pytest.raises(AlignmentError):
        model.forward(tokens, injected=[(1, Tensor(np.ones((2, 3))))])


def test_save_load_keeps_fingerprint_and_config_keys(tmp_path):
    model = DecoderModel(SMALL)
    randomize_biases(model)
    model.save(tmp_path)
    keys = set(json.loads((tmp_path / "decoder_config.json").read_text()))
    assert keys == {"d_model", "n_layers", "n_q_heads", "n_kv_heads", "rotary_fraction",
                    "vocab_size", "max_context", "mlp_hidden", "seed"}
    loaded = DecoderModel.load(tmp_path)
    assert loaded.fingerprint() == model.fingerprint()
    assert loaded.config == model.config
    tokens = np.arange(6)
    assert np.array_equal(loaded.forward(tokens).data, model.forward(tokens).data)


def test_greedy_decode_of_overfit_model_reproduces_target():
    cfg = DecoderConfig(d_model=32, n_layers=1, n_q_heads=4, n_kv_heads=2, vocab_size=16, max_context=16, seed=1)
    model = DecoderModel(cfg)
    seq = np.array([1, 5, 9, 3, 7, 2])
    params = list(model.params.values())
    for p in params:
        p.requires_grad = True
    opt = Adam(params, lr=1e-2)
    for _ in range(150):
        opt.zero_grad()
        nx.cross_entropy_masked(model.forward(seq[:-1]), seq[1:], np.ones(5)).backward()
        opt.step()
    assert model.generate(seq[:1], 5) == list(seq[1:])


def test_generate_stops_at_stop_id():
    model = DecoderModel(SMALL)
    first = model.generate([1, 2], 4)
    assert len(first) == 4
    assert model.generate([1, 2], 4, stop_id=first[0]) == first[:1]


# -- learning rate law ------------------------------------------------------------


def test_peak_lr():
    assert peak_lr(1, 1) == 1.0
    ratio = peak_lr(3e-4, 50e9) / peak_lr(3e-4, 12.5e9)
    assert abs(ratio - 4 ** -0.32) <= 1e-12
    assert abs(ratio - 0.64172) <= 1e-5  # printed to five places
    grid = np.linspace(1e9, 1e11, 100)
    values = [peak_lr(2.0, d) for d in grid]
    assert all(a > b for a, b in zip(values, values[1:]))
    for bad in [(0, 1), (1, 0), (-1, 5), (1, -5)]:
        with pytest.raises(DomainError):
            peak_lr(*bad)
