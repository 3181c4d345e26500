import numpy as np
import pytest

from imagechat import tensor as T
from imagechat.combiner import (AttentionCombiner, all_modality_masks,
                                mm_sum_fuse, score_candidates)
from imagechat.encoders import EncodedContext
from imagechat.params import ParameterStore
from imagechat.tensor import ShapeError, Tensor


def ctx_from(r_i, r_s, r_d):
    return EncodedContext(r_image=Tensor([r_i]), r_style=Tensor([r_s]),
                          r_dialogue=Tensor([r_d]),
                          present=frozenset({"image", "style", "dialogue"}))


FULL = frozenset({"image", "style", "dialogue"})


class TestMmSum:
    def test_full_mask_arithmetic(self):
        ctx = ctx_from([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
        fused = mm_sum_fuse(ctx, FULL)
        assert np.allclose(fused.r_fused.data, [[2.0, 2.0]])

    def test_partial_mask_equals_zeroed_modality(self):
        ctx = ctx_from([1.0, 0.0], [0.5, 1.0], [1.0, 1.0])
        masked = mm_sum_fuse(ctx, {"image", "dialogue"}).r_fused.data
        zeroed = ctx_from([1.0, 0.0], [0.0, 0.0], [1.0, 1.0])
        full = mm_sum_fuse(zeroed, FULL).r_fused.data
        assert np.array_equal(masked, full)

    def test_style_only_mask(self):
        ctx = ctx_from([1.0, 0.0], [0.5, 1.0], [1.0, 1.0])
        fused = mm_sum_fuse(ctx, {"style"})
        assert np.array_equal(fused.r_fused.data, ctx.r_style.data)

    def test_empty_mask_rejected(self):
        ctx = ctx_from([1.0], [1.0], [1.0])
        with pytest.raises(ShapeError):
            mm_sum_fuse(ctx, set())

    def test_additivity_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r_i, r_s, r_d = rng.normal(size=(3, 4)).astype(np.float32)
            r_c = rng.normal(size=(1, 4)).astype(np.float32)
            ctx = ctx_from(list(r_i), list(r_s), list(r_d))
            cands = Tensor(r_c)
            full = score_candidates(mm_sum_fuse(ctx, FULL), cands).data
            partial = score_candidates(
                mm_sum_fuse(ctx, {"image", "dialogue"}), cands).data
            assert np.allclose(full, partial + r_s @ r_c.T, atol=1e-5)


class TestScoreCandidates:
    def test_dot_products(self):
        ctx = ctx_from([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
        fused = mm_sum_fuse(ctx, FULL)  # r_T = [2, 2]
        cands = Tensor([[2.0, 3.0], [1.0, 0.0]])
        scores = score_candidates(fused, cands)
        assert np.allclose(scores.data, [[10.0, 2.0]])

    def test_zero_context_zero_scores(self):
        ctx = ctx_from([0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
        scores = score_candidates(mm_sum_fuse(ctx, FULL),
                                  Tensor([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(scores.data, [[0.0, 0.0]])

    def test_candidate_scaling_preserves_argmax(self):
        rng = np.random.default_rng(1)
        ctx = ctx_from(*rng.normal(size=(3, 5)).tolist())
        cands = rng.normal(size=(6, 5)).astype(np.float32)
        fused = mm_sum_fuse(ctx, FULL)
        s1 = score_candidates(fused, Tensor(cands)).data
        s2 = score_candidates(fused, Tensor(3.0 * cands)).data
        assert np.allclose(s2, 3.0 * s1, rtol=1e-5)
        assert np.argmax(s1) == np.argmax(s2)

    def test_no_score_normalization(self):
        # adding a constant vector to r_T shifts scores by dot(c, r_C):
        # ranking is NOT invariant for differing candidates
        ctx_a = ctx_from([1.0, 0.0], [0.0, 0.0], [0.0, 0.0])
        ctx_b = ctx_from([2.0, 1.0], [0.0, 0.0], [0.0, 0.0])  # +[1,1]
        cands = Tensor([[1.0, -2.0], [0.5, 0.0]])
        sa = score_candidates(mm_sum_fuse(ctx_a, FULL), cands).data[0]
        sb = score_candidates(mm_sum_fuse(ctx_b, FULL), cands).data[0]
        assert np.argmax(sa) != np.argmax(sb)

    def test_zero_candidates_rejected(self):
        ctx = ctx_from([1.0], [1.0], [1.0])
        with pytest.raises(ShapeError):
            score_candidates(mm_sum_fuse(ctx, FULL),
                             Tensor(np.zeros((0, 1), dtype=np.float32)))


class TestMmAtt:
    def make(self, dim=8, seed=3, **kw):
        store = ParameterStore(seed=seed)
        return store, AttentionCombiner(store, "mmatt", dim=dim, n_layers=2,
                                        n_heads=2, ffn_mult=2, **kw)

    def rand_ctx(self, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=(3, 1, dim)).astype(np.float32)
        return EncodedContext(r_image=Tensor(r[0]), r_style=Tensor(r[1]),
                              r_dialogue=Tensor(r[2]), present=FULL)

    def test_single_modality_is_identity(self):
        # convex weights over one vector: r_T equals the input vector
        _, comb = self.make()
        ctx = self.rand_ctx()
        fused = comb.fuse(ctx, {"dialogue"})
        assert np.allclose(fused.r_fused.data, ctx.r_dialogue.data, atol=1e-6)

    def test_output_width(self):
        _, comb = self.make(dim=8)
        fused = comb.fuse(self.rand_ctx(), FULL)
        assert fused.r_fused.shape == (1, 8)

    def test_differs_from_mm_sum(self):
        _, comb = self.make()
        ctx = self.rand_ctx(seed=5)
        att = comb.fuse(ctx, FULL).r_fused.data
        summed = mm_sum_fuse(ctx, FULL).r_fused.data
        assert np.any(np.abs(att - summed) > 1e-5)

    def test_weights_are_convex_combination(self):
        # fused vector lies in the simplex hull of the inputs
        _, comb = self.make()
        ctx = self.rand_ctx(seed=7)
        fused = comb.fuse(ctx, FULL).r_fused.data[0]
        vecs = np.stack([ctx.r_image.data[0], ctx.r_style.data[0],
                         ctx.r_dialogue.data[0]])
        w, *_ = np.linalg.lstsq(vecs.T, fused, rcond=None)
        assert np.allclose(vecs.T @ w, fused, atol=1e-4)
        assert np.all(w > -1e-4)
        assert abs(w.sum() - 1.0) < 1e-4

    def test_contextual_state_variant_differs(self):
        store = ParameterStore(seed=3)
        plain = AttentionCombiner(store, "a", dim=8, n_layers=1, n_heads=2,
                                  ffn_mult=2)
        store2 = ParameterStore(seed=3)
        variant = AttentionCombiner(store2, "a", dim=8, n_layers=1, n_heads=2,
                                    ffn_mult=2, use_contextual_states=True)
        ctx = self.rand_ctx(seed=9)
        a = plain.fuse(ctx, FULL).r_fused.data
        b = variant.fuse(ctx, FULL).r_fused.data
        assert np.any(np.abs(a - b) > 1e-5)


def test_all_modality_masks_cardinality():
    masks = all_modality_masks()
    assert len(masks) == 7
    assert len(set(masks)) == 7
    assert all(masks)
