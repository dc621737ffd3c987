import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_features, random_partition, randomize
from zpress.errors import ConfigError, InvalidInput, ShapeError
from zpress.numcore import LinearParams, Tensor, archive, grad_check, precision
from zpress.objective import ib_loss
from zpress.selection import AnchorPartition
from zpress.zpressor import (
    ViewFeature,
    compress,
    fuse_cluster,
    init_params,
    zero_params,
)


class TestInit:
    def test_divisibility(self):
        with pytest.raises(ConfigError):
            init_params(6, h=1, heads=4)

    def test_same_seed_bit_identical(self):
        a = init_params(8, h=2, heads=2, seed=3).named_tensors()
        b = init_params(8, h=2, heads=2, seed=3).named_tensors()
        assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)

    def test_different_seed_differs(self):
        a = init_params(8, h=2, heads=2, seed=3).named_tensors()
        b = init_params(8, h=2, heads=2, seed=4).named_tensors()
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_fresh_blocks_are_identity(self):
        rng = np.random.default_rng(0)
        feats = random_features(rng, 6, 3, 3, 8)
        part = random_partition(rng, 6, 2)
        params = init_params(8, h=3, heads=2, seed=1)
        z = compress(feats, part, params)
        expect = np.stack([feats[a].data for a in part.anchors])
        assert z.features.data.tobytes() == expect.tobytes()

    def test_canonical_names(self):
        names = list(init_params(4, h=2, heads=1).named_tensors())
        assert "block0.cross.q.weight" in names and "block1.mlp.fc2.bias" in names
        assert names[-2:] == ["posterior.head.weight", "posterior.head.bias"]

    def test_archive_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        params = randomize(init_params(8, h=2, heads=2), rng)
        path = tmp_path / "p.zptn"
        archive.save(path, {k: t.data for k, t in params.named_tensors().items()})
        fresh = init_params(8, h=2, heads=2, seed=9)
        fresh.load_arrays(archive.load(path))
        for k, t in params.named_tensors().items():
            np.testing.assert_array_equal(fresh.named_tensors()[k].data, t.data)


class TestFuseCluster:
    def test_zero_params_identity(self):
        rng = np.random.default_rng(2)
        f = random_features(rng, 3, 2, 2, 4)
        out = fuse_cluster(f[0], f[1:], zero_params(4).blocks[0])
        np.testing.assert_array_equal(out.data, f[0].data)

    def test_support_permutation(self):
        rng = np.random.default_rng(3)
        f = random_features(rng, 4, 2, 3, 8)
        block = randomize(init_params(8, h=1, heads=2), rng).blocks[0]
        a = fuse_cluster(f[0], [f[1], f[2], f[3]], block, heads=2).data
        b = fuse_cluster(f[0], [f[3], f[1], f[2]], block, heads=2).data
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(4)
        a = random_features(rng, 1, 2, 2, 4)[0]
        b = random_features(rng, 1, 2, 2, 8)[0]
        with pytest.raises(ShapeError):
            fuse_cluster(a, [b], init_params(4, h=1, heads=1).blocks[0])

    def test_hand_computed_single_token(self):
        """1 anchor token, 1 support token, single head, identity-ish weights."""
        c = 2
        params = zero_params(c, h=1, heads=1, dtype=np.float64)
        blk = params.blocks[0]
        blk.cross.q.weight.data = np.eye(c)
        blk.cross.k.weight.data = np.eye(c)
        blk.cross.v.weight.data = np.array([[2.0, 0.0], [0.0, 3.0]])
        blk.cross.o.weight.data = np.eye(c)
        blk.cross.o.bias.data = np.array([0.1, -0.2])
        x = np.array([[1.0, -1.0]])
        s = np.array([[0.5, 2.0]])
        with precision(np.float64):
            out = fuse_cluster(ViewFeature(1, 1, c, x), [ViewFeature(1, 1, c, s)], blk, heads=1, self_attention=False).data
        # one key: softmax weight 1, so cross-attn output = o(v(s)); layer norm
        # of the query cannot matter. MLP and self-attn have zero weights.
        expect = x + (np.array([2.0 * 0.5, 3.0 * 2.0]) + [0.1, -0.2])
        np.testing.assert_allclose(out, expect, atol=1e-5)

    def test_hand_computed_two_supports(self):
        c = 2
        params = zero_params(c, h=1, heads=1, dtype=np.float64)
        blk = params.blocks[0]
        for proj in (blk.cross.q, blk.cross.k, blk.cross.v, blk.cross.o):
            proj.weight.data = np.eye(c)
        x = np.array([[3.0, 1.0]])
        s1, s2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        with precision(np.float64):
            out = fuse_cluster(
                ViewFeature(1, 1, c, x), [ViewFeature(1, 1, c, s1), ViewFeature(1, 1, c, s2)], blk, heads=1, self_attention=False
            ).data
        q = np.array([1.0, -1.0])  # layer norm of [3, 1]
        scores = np.array([q @ s1[0], q @ s2[0]]) / math.sqrt(2)
        w = np.exp(scores) / np.exp(scores).sum()
        expect = x[0] + w[0] * s1[0] + w[1] * s2[0]
        np.testing.assert_allclose(out[0], expect, atol=1e-5)


class TestCompress:
    def setup_method(self):
        self.rng = np.random.default_rng(5)
        self.feats = random_features(self.rng, 8, 2, 2, 8)
        self.part = random_partition(self.rng, 8, 3)

    def test_no_fusion_passthrough(self):
        params = randomize(init_params(8, h=2, heads=2), self.rng)
        z = compress(self.feats, self.part, params, mode="no_fusion")
        expect = np.stack([self.feats[a].data for a in self.part.anchors])
        np.testing.assert_array_equal(z.features.data, expect)

    @pytest.mark.parametrize("mode", ["default", "fuse_anchors", "no_fusion"])
    def test_zero_params_posterior_is_bias(self, mode):
        bias = np.arange(16, dtype=np.float32) * 0.1
        params = zero_params(8, h=2, heads=2, posterior_bias=bias)
        z = compress(self.feats, self.part, params, mode=mode)
        expect = np.stack([self.feats[a].data for a in self.part.anchors])
        np.testing.assert_array_equal(z.features.data, expect)
        np.testing.assert_array_equal(z.posterior_mean.data, np.broadcast_to(bias[:8], z.features.shape))
        np.testing.assert_array_equal(z.posterior_logvar.data, np.broadcast_to(bias[8:], z.features.shape))

    def test_default_differs_from_fuse_anchors(self):
        params = randomize(init_params(8, h=2, heads=2), self.rng)
        a = compress(self.feats, self.part, params, mode="default").features.data
        b = compress(self.feats, self.part, params, mode="fuse_anchors").features.data
        assert np.linalg.norm(a - b) > 0

    def test_fuse_anchors_equals_self_keys(self):
        # repeated copies of the anchor are equivalent to one copy of it
        params = randomize(init_params(8, h=2, heads=2), self.rng)
        part = AnchorPartition(8, self.part.anchors, [[] for _ in self.part.anchors] and self.part.clusters)
        z = compress(self.feats, part, params, mode="fuse_anchors").features.data
        empty = AnchorPartition(3, [0, 1, 2], [[], [], []])
        zf = compress([self.feats[a] for a in part.anchors], empty, params, mode="default").features.data
        np.testing.assert_allclose(z, zf, atol=1e-5)

    def test_mismatch_rejected(self):
        with pytest.raises(InvalidInput):
            compress(self.feats[:5], self.part, init_params(8, h=1, heads=2))

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            compress(self.feats, self.part, init_params(8, h=1, heads=2), mode="bogus")

    def test_token_count_independent_of_k(self):
        params = init_params(8, h=1, heads=2)
        for k in (4, 8, 16, 32):
            feats = random_features(self.rng, k, 2, 2, 8)
            z = compress(feats, random_partition(self.rng, k, 3), params)
            assert z.n_tokens == 3 * 2 * 2

    def test_single_block_uses_first_block_only(self):
        params = randomize(init_params(8, h=3, heads=2), self.rng)
        one = init_params(8, h=1, heads=2)
        one.blocks = params.blocks[:1]
        one.posterior = params.posterior
        a = compress(self.feats, self.part, params, ablation={"single_block"}).features.data
        b = compress(self.feats, self.part, one).features.data
        np.testing.assert_array_equal(a, b)

    def test_no_self_attention_ignores_self_params(self):
        params = randomize(init_params(8, h=2, heads=2), self.rng)
        a = compress(self.feats, self.part, params, ablation={"no_self_attention"}).features.data
        for b in params.blocks:
            b.self_attn.q.weight.data = b.self_attn.q.weight.data * 3.0
        b = compress(self.feats, self.part, params, ablation={"no_self_attention"}).features.data
        np.testing.assert_array_equal(a, b)

    def test_training_sample_uses_rng(self):
        params = init_params(8, h=1, heads=2, logvar_init=0.0)
        z1 = compress(self.feats, self.part, params, train=True, rng=np.random.default_rng(0))
        z2 = compress(self.feats, self.part, params, train=True, rng=np.random.default_rng(0))
        ze = compress(self.feats, self.part, params)
        np.testing.assert_array_equal(z1.sample.data, z2.sample.data)
        assert not np.array_equal(z1.sample.data, ze.sample.data)
        np.testing.assert_array_equal(ze.sample.data, ze.posterior_mean.data)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_support_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 9))
    feats = random_features(rng, k, 2, 2, 8)
    part = random_partition(rng, k, int(rng.integers(1, k)))
    params = randomize(init_params(8, h=2, heads=2, seed=seed), rng, scale=0.3)
    shuffled = AnchorPartition(k, part.anchors, [list(rng.permutation(c)) for c in part.clusters])
    a = compress(feats, part, params).features.data
    b = compress(feats, shuffled, params).features.data
    np.testing.assert_allclose(a, b, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cluster_independence(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(4, 10))
    feats = random_features(rng, k, 2, 2, 8)
    part = random_partition(rng, k, int(rng.integers(2, k)))
    nonempty = [i for i, c in enumerate(part.clusters) if c]
    if not nonempty:
        return
    j = nonempty[int(rng.integers(len(nonempty)))]
    victim = part.clusters[j][0]
    params = randomize(init_params(8, h=2, heads=2, seed=seed), rng, scale=0.3)
    before = compress(feats, part, params).features.data
    changed = list(feats)
    changed[victim] = ViewFeature(2, 2, 8, feats[victim].data + rng.normal(size=(4, 8)).astype(np.float32))
    after = compress(changed, part, params).features.data
    for i in range(part.n):
        if i != j:
            assert before[i].tobytes() == after[i].tobytes()
    assert not np.array_equal(before[j], after[j])


@pytest.mark.parametrize("seed", range(20))
def test_identity_at_init_bitwise(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 13))
    feats = random_features(rng, k, int(rng.integers(1, 4)), int(rng.integers(1, 4)), 8)
    part = random_partition(rng, k, int(rng.integers(1, k + 1)))
    params = init_params(8, h=int(rng.integers(1, 4)), heads=2, seed=seed)
    a = compress(feats, part, params, mode="default").features.data
    b = compress(feats, part, params, mode="no_fusion").features.data
    assert a.tobytes() == b.tobytes()


def compress_ib_check(seed, h=2):
    """Finite-difference check of d(ib_loss)/d(params) through compress (float64)."""
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        feats = random_features(rng, 4, 2, 2, 4, dtype=np.float64)
        part = random_partition(rng, 4, 2)
        params = randomize(init_params(4, h=h, heads=2, seed=seed, dtype=np.float64), rng, scale=0.4)
        target = rng.normal(size=(2, 4, 4))

        def f():
            z = compress(feats, part, params, train=True, rng=np.random.default_rng(seed))
            return ib_loss(z.sample, target, z, beta=0.05).tensor

        return grad_check(f, params.tensors(), h=1e-5, tol=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_compress_ib_gradient(seed):
    rep = compress_ib_check(seed)
    assert rep.max_rel_error <= 1e-3, rep.max_rel_error
