import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cross_attention_loops
from refsam3d.crossmodal import (
    CrossModalProjector,
    HierarchicalCrossAttention,
    ProjectedText,
    collect_features,
    cross_attention_stage,
    fuse_stages,
    pad_text,
    project_text,
    to_prompt,
)
from refsam3d.encoder3d import EncoderConfig, ImageEncoder3D
from refsam3d.errors import DimensionError, InputError, RefSAM3DError
from refsam3d.numerics.nn import Linear
from refsam3d.numerics.tensor import Tensor

C = 6


def projections(rng, c=C):
    return Linear(c, c, rng), Linear(c, c, rng), Linear(c, c, rng)


def oracle(V, text, q, k, v):
    return cross_attention_loops(V, text, q.weight.data, q.bias.data, k.weight.data, k.bias.data,
                                 v.weight.data, v.bias.data)


@pytest.mark.parametrize("M,L,B", list(itertools.product(range(1, 5), range(1, 5), range(1, 3))))
def test_cross_attention_matches_loops(M, L, B):
    rng = np.random.default_rng(100 * M + 10 * L + B)
    q, k, v = projections(rng)
    V = rng.normal(size=(B, M, C))
    text = rng.normal(size=(L, C))
    got = cross_attention_stage(Tensor(V), ProjectedText(Tensor(text)), q, k, v).data
    assert got.shape == (B, M, C)
    np.testing.assert_allclose(got, oracle(V, text, q, k, v), atol=1e-10, rtol=0)


def test_single_word_gives_its_value_row(rng):
    q, k, v = projections(rng)
    text = rng.normal(size=(1, C))
    out = cross_attention_stage(Tensor(rng.normal(size=(2, 5, C))), ProjectedText(Tensor(text)), q, k, v).data
    want = text[0] @ v.weight.data + v.bias.data
    np.testing.assert_allclose(out, np.broadcast_to(want, out.shape), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_attention_output_is_convex_combination_of_values(M, L, seed):
    rng = np.random.default_rng(seed)
    q, k, v = projections(rng)
    text = rng.normal(size=(L, C))
    out = cross_attention_stage(Tensor(rng.normal(size=(1, M, C)) * 3), ProjectedText(Tensor(text)), q, k, v).data
    vals = text @ v.weight.data + v.bias.data
    assert out.shape == (1, M, C)
    lo, hi = vals.min(axis=0), vals.max(axis=0)
    assert (out >= lo - 1e-9).all() and (out <= hi + 1e-9).all()


def test_attention_rows_sum_to_one(rng):
    q, k, _ = projections(rng)
    L = 4
    text = rng.normal(size=(L, C))
    # Value projection that reads a constant 1 column: output is sum of attention weights.
    v = Linear(C, C, rng)
    v.weight.data[...] = 0
    v.bias.data[...] = 1.0
    out = cross_attention_stage(Tensor(rng.normal(size=(2, 7, C))), ProjectedText(Tensor(text)), q, k, v).data
    np.testing.assert_allclose(out, 1.0, atol=1e-14)


def test_zero_words_rejected(rng):
    q, k, v = projections(rng)
    with pytest.raises(InputError):
        cross_attention_stage(Tensor(np.zeros((1, 2, C))), ProjectedText(Tensor(np.zeros((0, C)))), q, k, v)


def test_width_mismatch(rng):
    q, k, v = projections(rng)
    with pytest.raises(DimensionError):
        cross_attention_stage(Tensor(np.zeros((1, 2, C + 1))), ProjectedText(Tensor(np.zeros((2, C)))), q, k, v)


# ---------------------------------------------------------------- fusion and prompt
def test_single_stage_fusion_is_identity(rng):
    O = Tensor(rng.normal(size=(1, 8, C)))
    np.testing.assert_allclose(fuse_stages([O], Tensor(np.array([3.7]))).data, O.data, atol=1e-15)


def test_equal_weights_average_stages(rng):
    outs = [Tensor(rng.normal(size=(2, 8, C))) for _ in range(4)]
    fused = fuse_stages(outs, Tensor(np.zeros(4)))
    assert fused.shape == (2, 8, C)  # a weighted sum, never a concatenation
    np.testing.assert_allclose(fused.data, np.mean([o.data for o in outs], axis=0), atol=1e-14)


def test_fusion_weights_are_softmax(rng):
    outs = [Tensor(np.full((1, 2, C), float(i))) for i in range(3)]
    w = np.array([0.5, -1.0, 2.0])
    sm = np.exp(w) / np.exp(w).sum()
    np.testing.assert_allclose(fuse_stages(outs, Tensor(w)).data, sm @ np.arange(3.0), atol=1e-14)


def test_fusion_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        fuse_stages([Tensor(np.zeros((1, 8, C))), Tensor(np.zeros((1, 4, C)))], Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        fuse_stages([Tensor(np.zeros((1, 8, C)))], Tensor(np.zeros(2)))


def test_dense_prompt_roundtrip(rng):
    fused = rng.normal(size=(2, 24, C))
    p = to_prompt(Tensor(fused), (2, 3, 4), Tensor(rng.normal(size=(3, C))))
    assert p.dense.shape == (2, C, 2, 3, 4) and p.sparse.shape == (2, 3, C)
    back = np.transpose(p.dense.data, (0, 2, 3, 4, 1)).reshape(2, 24, C)
    np.testing.assert_array_equal(back, fused)
    with pytest.raises(DimensionError):
        to_prompt(Tensor(fused), (2, 3, 3), Tensor(np.zeros((1, C))))


def test_zero_query_pooling_is_mean(rng):
    fused = rng.normal(size=(1, 10, C))
    p = to_prompt(Tensor(fused), (1, 2, 5), Tensor(np.zeros((1, C))))
    np.testing.assert_allclose(p.sparse.data[0, 0], fused[0].mean(axis=0), atol=1e-14)


# ---------------------------------------------------------------- projector
def test_projector_identity_init(rng):
    mlp = CrossModalProjector(C, C, rng)
    mlp.identity_init()
    F = Tensor(rng.normal(size=(5, C)))
    np.testing.assert_array_equal(project_text(F, mlp).tokens.data, F.data)


def test_projector_acts_per_word(rng):
    mlp = CrossModalProjector(4, C, rng)
    F = rng.normal(size=(5, 4))
    full = mlp(Tensor(F)).tokens.data
    for i in range(5):
        np.testing.assert_allclose(mlp(Tensor(F[i:i + 1])).tokens.data[0], full[i], atol=1e-14)
    with pytest.raises(DimensionError):
        mlp(Tensor(np.zeros((5, 3))))
    with pytest.raises(DimensionError):
        mlp.identity_init()


def test_pad_text_widths(rng):
    F = Tensor(rng.normal(size=(3, 4)))
    padded = pad_text(F, 6).tokens.data
    np.testing.assert_array_equal(padded[:, :4], F.data)
    assert not padded[:, 4:].any()
    assert pad_text(F, 2).tokens.shape == (3, 2)


# ---------------------------------------------------------------- stage features and the module
def small_encoder(rng):
    cfg = EncoderConfig(embed_dim=C, patch_k=2, depth_patch=2, num_stages=4, window=(2, 2, 2),
                        adapter_rank=2, num_heads=2, mlp_ratio=2, volume_shape=(8, 8, 8))
    return ImageEncoder3D(cfg, rng)


def test_collect_features_and_stage_locality(rng):
    enc = small_encoder(rng)
    x = Tensor(rng.normal(size=(1, 1, 8, 8, 8)))
    before = collect_features(enc(x), 4)
    assert len(before) == 4 and all(f.shape == (1, 64, C) for f in before.features)
    for p in enc.blocks[1].parameters():  # stage 2
        p.data += 0.1
    after = collect_features(enc(x), 4)
    np.testing.assert_array_equal(after.features[0].data, before.features[0].data)
    for i in range(1, 4):
        assert not np.array_equal(after.features[i].data, before.features[i].data)
    with pytest.raises(RefSAM3DError, match="expected 3 stages, got 4"):
        collect_features(enc(x), 3)


def test_zero_value_projection_makes_prompt_text_independent(rng):
    hca = HierarchicalCrossAttention(C, 2, 2, rng)
    hca.v.weight.data[...] = 0
    feats = collect_features(small_encoder(rng)(Tensor(rng.normal(size=(1, 1, 8, 8, 8)))))
    feats.features, feats.dims = feats.features[:2], feats.dims[:2]
    a = hca(feats, ProjectedText(Tensor(rng.normal(size=(3, C)))))
    b = hca(feats, ProjectedText(Tensor(rng.normal(size=(7, C)))))
    np.testing.assert_allclose(a.dense.data, b.dense.data, atol=1e-14)
    np.testing.assert_allclose(a.sparse.data, b.sparse.data, atol=1e-14)


def test_stage_subset_uses_only_selected_stages(rng):
    hca = HierarchicalCrossAttention(C, 3, 2, rng, stages_used=(2,))
    assert hca.fusion.shape == (1,)
    feats = collect_features(small_encoder(rng)(Tensor(rng.normal(size=(1, 1, 8, 8, 8)))))
    feats.features, feats.dims = feats.features[:3], feats.dims[:3]
    text = ProjectedText(Tensor(rng.normal(size=(3, C))))
    want = cross_attention_stage(feats.features[1], text, hca.q[1], hca.k, hca.v).data
    np.testing.assert_allclose(hca(feats, text).fused.data, want, atol=1e-15)
    with pytest.raises(DimensionError):
        HierarchicalCrossAttention(C, 3, 2, rng, stages_used=(4,))


def test_zero_prompt_shapes(rng):
    hca = HierarchicalCrossAttention(C, 2, 3, rng)
    p = hca.zero_prompt(2, (2, 2, 2), np.float32)
    assert p.dense.shape == (2, C, 2, 2, 2) and p.sparse.shape == (2, 3, C)
    assert not p.dense.data.any() and p.dense.dtype == np.float32
