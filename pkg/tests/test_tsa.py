import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serlct import functional as F
from serlct.tensor import ConfigError, Tensor
from serlct.tsa import TSA, SpaceChannelAttention, TimingAttention, TsaConfig, channel_branch, spatial_branch

from oracles import lstm_cell_unrolled


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def shuffle_oracle(x, G):
    C = x.shape[1]
    out = np.empty_like(x)
    for i in range(C):
        out[:, i] = x[:, (i % G) * (C // G) + i // G]
    return out


def gn_oracle(x, eps=1e-5):
    m = x.mean(axis=(2, 3), keepdims=True)
    v = ((x - m) ** 2).mean(axis=(2, 3), keepdims=True)
    return (x - m) / np.sqrt(v + eps)


# -- timing attention ---------------------------------------------------------------

def test_timing_matches_composition_oracle(rng):
    ta = TimingAttention(6, rng)
    x = rng.normal(size=(2, 5, 6, 7))
    got = ta(T(x)).data
    for n in range(2):
        seq = x[n].mean(axis=0).T                                  # (W, H)
        f = lstm_cell_unrolled(seq, ta.bilstm.fwd.w_ih.data, ta.bilstm.fwd.w_hh.data, ta.bilstm.fwd.bias.data)
        b = lstm_cell_unrolled(seq, ta.bilstm.bwd.w_ih.data, ta.bilstm.bwd.w_hh.data, ta.bilstm.bwd.bias.data, True)
        gate = sig(np.concatenate([f, b], axis=1).T)                # (H, W)
        np.testing.assert_allclose(got[n], x[n] * gate[None], rtol=0, atol=1e-10)


def test_timing_zero_weights_halves(rng):
    ta = TimingAttention(4, rng)
    for p in ta.parameters():
        p.data[...] = 0.0
    x = rng.normal(size=(1, 3, 4, 5))
    np.testing.assert_allclose(ta(T(x)).data, 0.5 * x, rtol=1e-15)


def test_timing_gate_bound(rng):
    ta = TimingAttention(4, rng)
    x = rng.normal(size=(2, 3, 4, 9))
    g = ta.gate(T(x)).data
    assert g.min() > 0 and g.max() < 1
    assert np.all(np.abs(ta(T(x)).data) <= np.abs(x))


def test_timing_odd_height_rejected(rng):
    with pytest.raises(ConfigError):
        TimingAttention(5, rng)
    with pytest.raises(ConfigError):
        TsaConfig().validate(128, 7)


# -- branches -------------------------------------------------------------------------

def test_channel_branch_cases(rng):
    xc = rng.normal(size=(2, 3, 4, 5))
    z = T(np.zeros(3))
    np.testing.assert_allclose(channel_branch(T(xc), z, z).data, 0.5 * xc, rtol=1e-15)
    np.testing.assert_allclose(channel_branch(T(xc), z, T(np.full(3, 20.0))).data, xc, atol=1e-8)
    w1, b1 = rng.normal(size=3), rng.normal(size=3)
    got = channel_branch(T(xc), T(w1), T(b1)).data
    for n in range(2):
        for c in range(3):
            g = 1.0 / (1.0 + np.exp(-(w1[c] * xc[n, c].mean() + b1[c])))
            np.testing.assert_allclose(got[n, c], g * xc[n, c], rtol=0, atol=1e-12)


def test_spatial_branch_cases(rng):
    xs = np.full((1, 2, 3, 3), 4.0)
    z = T(np.zeros(2))
    np.testing.assert_allclose(spatial_branch(T(xs), T(rng.normal(size=2)), z).data, 0.5 * xs, rtol=1e-15)
    xs = rng.normal(size=(2, 4, 3, 5))
    w2, b2 = rng.normal(size=4), rng.normal(size=4)
    out = spatial_branch(T(xs), T(w2), T(b2)).data
    gate = sig(w2[None, :, None, None] * gn_oracle(xs) + b2[None, :, None, None])
    np.testing.assert_allclose(out, gate * xs, rtol=0, atol=1e-10)
    assert np.all(np.abs(out) < np.abs(xs))


# -- space-channel attention ----------------------------------------------------------------

def sca_oracle(x, m: SpaceChannelAttention):
    B, C, H, W = x.shape
    G = m.groups
    per, half = C // G, C // G // 2
    out = np.empty_like(x)
    w1, b1 = m.channel_weight.data, m.channel_bias.data
    w2, b2 = m.spatial_weight.data, m.spatial_bias.data
    for g in range(G):
        grp = x[:, g * per : (g + 1) * per]
        xc, xs = grp[:, :half], grp[:, half:]
        gc = sig(w1[None, :, None, None] * xc.mean(axis=(2, 3), keepdims=True) + b1[None, :, None, None])
        gs = sig(w2[None, :, None, None] * gn_oracle(xs) + b2[None, :, None, None])
        out[:, g * per : g * per + half] = xc * gc
        out[:, g * per + half : (g + 1) * per] = xs * gs
    return shuffle_oracle(out, G)


def test_space_channel_matches_oracle(rng):
    m = SpaceChannelAttention(16, 4)
    for p in m.parameters():
        p.data = rng.normal(size=p.shape)
    x = rng.normal(size=(2, 16, 3, 5))
    np.testing.assert_allclose(m(T(x)).data, sca_oracle(x, m), rtol=0, atol=1e-10)


def test_space_channel_saturated_gates_give_shuffle(rng):
    m = SpaceChannelAttention(128, 8)
    m.channel_bias.data[...] = 40.0
    m.spatial_bias.data[...] = 40.0
    x = rng.normal(size=(1, 128, 6, 4))
    out = m(T(x)).data
    assert out.shape == x.shape
    np.testing.assert_allclose(out, shuffle_oracle(x, 8), rtol=1e-12, atol=0)


def test_channel_shuffle_permutation_and_inverse(rng):
    x = rng.normal(size=(2, 12, 2, 3))
    y = F.channel_shuffle(T(x), 3).data
    np.testing.assert_array_equal(y, shuffle_oracle(x, 3))
    assert sorted(map(tuple, y[0].reshape(12, -1))) == sorted(map(tuple, x[0].reshape(12, -1)))
    np.testing.assert_array_equal(F.channel_shuffle(T(y), 4).data, x)


# -- T-Sa ---------------------------------------------------------------------------------

def test_tsa_disabled_is_identity(rng):
    m = TSA(16, 4, TsaConfig(groups=2, enabled=False), rng)
    x = rng.normal(size=(1, 16, 4, 3))
    np.testing.assert_array_equal(m(T(x)).data, x)
    assert m.parameters() == []


def test_tsa_timing_disabled_equals_space_channel(rng):
    m = TSA(16, 4, TsaConfig(groups=2, timing_enabled=False), rng)
    x = rng.normal(size=(2, 16, 4, 3))
    np.testing.assert_array_equal(m(T(x)).data, m.space_channel(T(x)).data)


def test_tsa_staged_composition(rng):
    m = TSA(16, 4, TsaConfig(groups=4), rng)
    x = rng.normal(size=(2, 16, 4, 3))
    np.testing.assert_array_equal(m(T(x)).data, m.space_channel(m.timing(T(x))).data)


def test_tsa_config_errors():
    with pytest.raises(ConfigError):
        TsaConfig(groups=3).validate(128, 6)
    TsaConfig(groups=64).validate(128, 6)          # 2 channels per group is fine
    with pytest.raises(ConfigError):
        TsaConfig(groups=128).validate(128, 6)


@settings(max_examples=25, deadline=None)
@given(
    groups=st.sampled_from([1, 2, 4]),
    per=st.sampled_from([2, 4]),
    h=st.sampled_from([2, 4, 6]),
    w=st.integers(1, 6),
    timing=st.booleans(),
)
def test_tsa_shape_preserved(groups, per, h, w, timing):
    C = groups * per
    rng = np.random.default_rng(0)
    m = TSA(C, h, TsaConfig(groups=groups, timing_enabled=timing), rng)
    assert m(T(rng.normal(size=(2, C, h, w)))).shape == (2, C, h, w)
