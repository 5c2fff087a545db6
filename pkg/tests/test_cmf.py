import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from cmfseg.cmf import CMF, CMFConfig, FuseStep, adapt_language, image_to_word_attention
from cmfseg.exceptions import ConfigurationError, InvalidInputError
from cmfseg.visenc import spatial_coords_tensor


def _words(T_max, D, lengths, seed=0):
    g = torch.Generator().manual_seed(seed)
    H = torch.randn(len(lengths), T_max, D, generator=g, dtype=torch.float64)
    lengths = torch.tensor(lengths)
    H[torch.arange(T_max)[None, :] >= lengths[:, None]] = 0
    return H, lengths


# --- attention -----------------------------------------------------------------

def test_attention_matches_scalar_oracle(rng):
    V = rng.standard_normal((2, 2, 3))
    H = rng.standard_normal((4, 3))
    Wv, Wh = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    A = image_to_word_attention(torch.from_numpy(V).permute(2, 0, 1)[None], torch.from_numpy(H)[None],
                                torch.tensor([2]), torch.from_numpy(Wv), torch.from_numpy(Wh))
    np.testing.assert_allclose(A[0].numpy(), oracles.attention(V, H, 2, Wv, Wh), atol=1e-6, rtol=0)


def test_zero_projection_gives_uniform_rows():
    V = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    H, lengths = _words(6, 5, [4])
    A = image_to_word_attention(V, H, lengths, torch.zeros(2, 3, dtype=torch.float64),
                                torch.randn(2, 5, dtype=torch.float64))
    assert torch.allclose(A[0, :, :4], torch.full((16, 4), 0.25, dtype=torch.float64))
    assert torch.all(A[0, :, 4:] == 0)


def test_single_word_attention_is_one():
    V = torch.randn(1, 3, 2, 2, dtype=torch.float64)
    H, lengths = _words(5, 4, [1])
    A = image_to_word_attention(V, H, lengths, torch.randn(2, 3, dtype=torch.float64),
                                torch.randn(2, 4, dtype=torch.float64))
    assert torch.all(A[0, :, 0] == 1) and torch.all(A[0, :, 1:] == 0)


def test_attention_requires_a_word():
    V = torch.randn(1, 3, 2, 2)
    with pytest.raises(InvalidInputError):
        image_to_word_attention(V, torch.zeros(1, 4, 3), torch.tensor([0]), torch.randn(2, 3), torch.randn(2, 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_attention_rows_normalized(h, w, T_max, seed):
    g = torch.Generator().manual_seed(seed)
    lengths = torch.randint(1, T_max + 1, (3,), generator=g)
    V = torch.randn(3, 4, h, w, generator=g) * 3
    H = torch.randn(3, T_max, 5, generator=g) * 3
    A = image_to_word_attention(V, H, lengths, torch.randn(6, 4, generator=g), torch.randn(6, 5, generator=g))
    assert torch.allclose(A.sum(-1), torch.ones(3, h * w), atol=1e-5)
    pad = torch.arange(T_max)[None, None, :] >= lengths[:, None, None]
    assert torch.all(A[pad.expand_as(A)] == 0)


# --- adapted language ----------------------------------------------------------

def test_adapt_matches_scalar_oracle(rng):
    A = rng.random((6, 3))
    A[:, 2] = 0
    A /= A.sum(1, keepdims=True)
    H = rng.standard_normal((3, 4))
    out = adapt_language(torch.from_numpy(A)[None], torch.from_numpy(H)[None], (2, 3))
    np.testing.assert_allclose(out[0].permute(1, 2, 0).numpy(), oracles.adapt(A, H, 2, 2, 3), atol=1e-6)


def test_adapt_single_word_is_identity():
    H, _ = _words(4, 5, [1])
    A = torch.zeros(1, 9, 4, dtype=torch.float64)
    A[..., 0] = 1
    out = adapt_language(A, H, (3, 3))
    assert torch.equal(out[0], H[0, 0][:, None, None].expand(5, 3, 3))


def test_adapt_uniform_two_words():
    H, _ = _words(2, 3, [2])
    A = torch.full((1, 4, 2), 0.5, dtype=torch.float64)
    out = adapt_language(A, H, (2, 2))
    expected = ((H[0, 0] + H[0, 1]) / 2)[:, None, None].expand(3, 2, 2)
    assert torch.allclose(out[0], expected, atol=1e-15)


def test_adapt_is_convex_combination():
    torch.manual_seed(0)
    H, lengths = _words(5, 1, [3])
    A = image_to_word_attention(torch.randn(1, 2, 3, 3, dtype=torch.float64), H, lengths,
                                torch.randn(2, 2, dtype=torch.float64), torch.randn(2, 1, dtype=torch.float64))
    out = adapt_language(A, H, (3, 3))
    valid = H[0, :3, 0]
    assert torch.all(out >= valid.min() - 1e-12) and torch.all(out <= valid.max() + 1e-12)


# --- fuse step -----------------------------------------------------------------

@pytest.mark.parametrize("rate", [None, 1, 3, 5, 7, 9])
def test_fuse_step_preserves_size(rate):
    step = FuseStep(6, 5, 4, rate)
    V, S, L = torch.randn(2, 6, 8, 8), spatial_coords_tensor(8, 8, 2), torch.randn(2, 5, 8, 8)
    F_prev = None if rate is None else torch.randn(2, 4, 8, 8)
    assert step(V, S, F_prev, L).shape == (2, 4, 8, 8)


@pytest.mark.parametrize("rate", [None, 1, 2])
def test_fuse_step_matches_scalar_oracle(float64, rng, rate):
    torch.manual_seed(1)
    step = FuseStep(3, 2, 3, rate)
    V, L = rng.standard_normal((3, 4, 4)), rng.standard_normal((2, 4, 4))
    S = spatial_coords_tensor(4, 4, dtype=torch.float64)[0].numpy()
    F_prev = None if rate is None else rng.standard_normal((3, 4, 4))
    t = lambda a: None if a is None else torch.from_numpy(a)[None]
    got = step(t(V), t(S), t(F_prev), t(L))[0].detach().numpy()
    want = oracles.fuse_step(V, S, F_prev, L, oracles.numpy_params(step), rate)
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)


def test_hadamard_identity_when_language_embedding_is_ones(float64):
    torch.manual_seed(0)
    step = FuseStep(3, 2, 4, rate=1)
    with torch.no_grad():
        step.emb_lang.weight.zero_()
        step.emb_lang.bias.fill_(1.0)
    V, S, F_prev, L = torch.randn(1, 3, 4, 4), spatial_coords_tensor(4, 4, dtype=torch.float64), \
        torch.randn(1, 4, 4, 4), torch.randn(1, 2, 4, 4)
    x = torch.cat([V, S, F_prev], 1)
    expected = step.conv(torch.relu(step.emb_vis(x)))
    assert torch.equal(step(V, S, F_prev, L), expected)


def test_fuse_step_rejects_wrong_channels():
    step = FuseStep(3, 2, 4, rate=1)
    with pytest.raises(InvalidInputError):
        step(torch.randn(1, 5, 4, 4), spatial_coords_tensor(4, 4), torch.randn(1, 4, 4, 4), torch.randn(1, 2, 4, 4))


def test_fuse_step_gradient_matches_finite_differences(float64):
    torch.manual_seed(2)
    step = FuseStep(3, 3, 3, rate=1)
    V, F_prev, L = (torch.randn(1, c, 4, 4, requires_grad=True) for c in (3, 3, 3))
    S = spatial_coords_tensor(4, 4, dtype=torch.float64)
    loss = lambda: (step(V, S, F_prev, L) ** 2).sum()
    err = oracles.finite_difference_check(loss, list(step.parameters()) + [V, F_prev, L])
    assert err < 1e-4


# --- whole module -----------------------------------------------------------------

def test_cmf_output_shape():
    torch.manual_seed(0)
    cmf = CMF(64, 16, CMFConfig(out_dim=32))
    H, lengths = _words(20, 16, [5, 20])
    out = cmf(torch.randn(2, 64, 8, 8), spatial_coords_tensor(8, 8, 2), H.float(), lengths)
    assert out.shape == (2, 32, 8, 8)


def test_baseline_is_single_fusion():
    cfg = CMFConfig(out_dim=8, use_attention=False, use_parallel_branch=False, use_cascade=False)
    cmf = CMF(6, 5, cfg)
    names = {n.split(".")[0] for n, _ in cmf.named_parameters()}
    assert names == {"fuse0", "merge"}
    torch.manual_seed(0)
    H, lengths = _words(4, 5, [3])
    V, S = torch.randn(1, 6, 4, 4, dtype=torch.float64), spatial_coords_tensor(4, 4, dtype=torch.float64)
    cmf = cmf.double()
    last = H[0, 2][None, :, None, None].expand(1, 5, 4, 4)
    expected = torch.relu(cmf.merge(cmf.fuse0(V, S, None, last)))
    assert torch.equal(cmf(V, S, H, lengths), expected)


@pytest.mark.parametrize("dilations", [[2, 3], [3, 1], [1, 1], []])
def test_config_rejects_bad_schedule(dilations):
    with pytest.raises(ConfigurationError):
        CMFConfig(dilations=dilations)


def test_cmf_gradient_matches_finite_differences(float64):
    torch.manual_seed(3)
    cfg = CMFConfig(dilations=[1, 3], out_dim=2, fusion_dim=2, attention_dim=2)
    cmf = CMF(3, 3, cfg)
    V = torch.randn(1, 3, 4, 4, requires_grad=True)
    H, lengths = _words(3, 3, [2], seed=4)
    H.requires_grad_(True)
    S = spatial_coords_tensor(4, 4, dtype=torch.float64)
    target = torch.randn(1, 2, 4, 4)
    loss = lambda: ((cmf(V, S, H, lengths) - target) ** 2).sum()
    assert oracles.finite_difference_check(loss, list(cmf.parameters()) + [V, H]) < 1e-4


def test_pad_ids_do_not_change_output():
    from cmfseg.langenc import LanguageEncoder

    torch.manual_seed(0)
    enc, cmf = LanguageEncoder(10, 6), CMF(4, 6, CMFConfig(dilations=[1, 3], out_dim=4))
    ids = torch.randint(2, 10, (1, 8))
    lengths = torch.tensor([3])
    other = ids.clone()
    other[0, 3:] = torch.randint(0, 10, (5,))
    V, S = torch.randn(1, 4, 6, 6), spatial_coords_tensor(6, 6)
    a = cmf(V, S, enc(ids, lengths), lengths)
    b = cmf(V, S, enc(other, lengths), lengths)
    assert torch.equal(a, b)


@pytest.mark.parametrize("dilations", [[1], [1, 3], [1, 3, 5]])
def test_receptive_field(float64, dilations):
    torch.manual_seed(5)
    cmf = CMF(3, 3, CMFConfig(dilations=dilations, out_dim=3))
    with torch.no_grad():
        for p in cmf.parameters():
            p.abs_()  # positive weights: any reachable input moves the output
    size, p = 24, (12, 12)
    radius = sum(dilations)
    H, lengths = _words(3, 3, [2])
    H = H.abs()
    S = spatial_coords_tensor(size, size, dtype=torch.float64)
    V = torch.rand(1, 3, size, size) + 0.5
    base = cmf(V, S, H, lengths)[0, :, p[0], p[1]]
    for i, j in itertools.product(range(size), repeat=2):
        d = max(abs(i - p[0]), abs(j - p[1]))
        if d <= radius:
            continue
        W = V.clone()
        W[0, :, i, j] = 0
        assert torch.equal(cmf(W, S, H, lengths)[0, :, p[0], p[1]], base), (i, j)
    # a pixel exactly on the radius is reachable
    W = V.clone()
    W[0, :, p[0], p[1] + radius] = 0
    assert not torch.equal(cmf(W, S, H, lengths)[0, :, p[0], p[1]], base)


@pytest.mark.parametrize("flags", list(itertools.product([False, True], repeat=3)))
@pytest.mark.parametrize("parallel_input", ["fused", "concat"])
def test_every_flag_combination_is_finite(flags, parallel_input):
    att, par, cas = flags
    torch.manual_seed(0)
    cmf = CMF(5, 4, CMFConfig(dilations=[1, 3], out_dim=3, use_attention=att,
                              use_parallel_branch=par, use_cascade=cas, parallel_input=parallel_input))
    H, lengths = _words(5, 4, [2, 5])
    out = cmf(torch.randn(2, 5, 6, 6), spatial_coords_tensor(6, 6, 2), H.float(), lengths)
    assert torch.isfinite(out).all()
    (out.sum() + sum(0.0 * p.sum() for p in cmf.parameters())).backward()
    for n, prm in cmf.named_parameters():
        assert prm.grad is not None and torch.isfinite(prm.grad).all(), n
