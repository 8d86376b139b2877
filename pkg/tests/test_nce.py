import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupledet.errors import ConfigError, NoNegativesError, ShapeError
from tupledet.nce import (BgItem, FgItem, NceBatch, NegativeSet, nce_grad,
                          nce_loss, sample_negatives)


def fg_batch(f, g_plus, negatives):
    item = FgItem(f=np.asarray(f, float), g_plus=np.asarray(g_plus, float),
                  negatives=NegativeSet(np.asarray(negatives, float),
                                        list(range(len(negatives)))))
    return NceBatch([item], [], d=len(f))


def bg_batch(f, negatives):
    item = BgItem(f=np.asarray(f, float),
                  negatives=NegativeSet(np.asarray(negatives, float),
                                        list(range(len(negatives)))))
    return NceBatch([], [item], d=len(f))


class TestSampleNegatives:
    def _pool(self, n=10, d=4, seed=0):
        rng = np.random.default_rng(seed)
        cats = ["pan", "bowl", "cup", "egg", "fish"]
        return [(f"tok{i}", cats[i % len(cats)], rng.normal(size=d))
                for i in range(n)]

    def test_m_zero_gives_empty(self):
        ns = sample_negatives(self._pool(), "pan", 0, seed=1)
        assert ns.m == 0
        assert ns.source_ids == []

    def test_exhaustive_when_pool_exactly_m(self):
        pool = self._pool(n=5)
        eligible = [p for p in pool if p[1] != "pan"]
        ns = sample_negatives(pool, "pan", len(eligible), seed=3)
        assert sorted(ns.source_ids) == sorted(p[0] for p in eligible)

    def test_deterministic_for_seed(self):
        pool = self._pool(n=20)
        a = sample_negatives(pool, "bowl", 6, seed=42)
        b = sample_negatives(pool, "bowl", 6, seed=42)
        assert a.source_ids == b.source_ids
        assert np.array_equal(a.embeddings, b.embeddings)

    def test_never_returns_excluded_category(self):
        pool = self._pool(n=25)
        ns = sample_negatives(pool, "cup", 12, seed=5)
        excluded_ids = {tid for tid, cat, _ in pool if cat == "cup"}
        assert not excluded_ids & set(ns.source_ids)

    def test_multiword_category_excludes_constituents(self):
        pool = [("a", "frying", [1.0]), ("b", "pan", [2.0]), ("c", "egg", [3.0])]
        ns = sample_negatives(pool, "frying pan", 5, seed=0)
        assert set(ns.source_ids) == {"c"}

    def test_sampling_without_replacement_when_possible(self):
        pool = self._pool(n=20)
        ns = sample_negatives(pool, "pan", 10, seed=9)
        assert len(set(ns.source_ids)) == 10

    def test_with_replacement_when_pool_small(self):
        pool = self._pool(n=4)
        ns = sample_negatives(pool, "pan", 9, seed=2)
        assert ns.m == 9

    def test_empty_eligible_pool_raises(self):
        pool = [("a", "pan", [1.0, 2.0])]
        with pytest.raises(NoNegativesError):
            sample_negatives(pool, "pan", 3, seed=0)

    def test_none_excludes_nothing(self):
        pool = self._pool(n=6)
        ns = sample_negatives(pool, None, 6, seed=0)
        assert sorted(ns.source_ids) == sorted(p[0] for p in pool)


class TestNceLoss:
    def test_equal_similarity_fg_is_ln_m_plus_1(self):
        # all logits equal -> softmax uniform over m+1 -> loss = ln(m+1)
        for m in (1, 4, 64):
            d = 3
            g = np.zeros(d)  # every dot product is 0
            batch = fg_batch(np.ones(d), g, np.zeros((m, d)))
            report = nce_loss(batch)
            assert report.l_fg == pytest.approx(np.log(m + 1), abs=1e-9)
            assert report.l_bg == 0.0
            assert report.total == pytest.approx(np.log(m + 1), abs=1e-9)

    def test_zero_logit_bg_is_ln_1_plus_m(self):
        for m in (1, 4, 64):
            batch = bg_batch(np.zeros(3), np.ones((m, 3)))
            report = nce_loss(batch)
            assert report.l_bg == pytest.approx(np.log(1 + m), abs=1e-9)

    def test_single_bg_ln2(self):
        batch = bg_batch(np.zeros(2), np.zeros((1, 2)))
        assert nce_loss(batch).l_bg == pytest.approx(np.log(2.0), abs=1e-12)

    def test_hand_evaluated_fg(self):
        # f.g+ = 2, one negative with f.h = 0 -> ln(1 + e^-2)
        f = np.array([2.0, 0.0])
        g = np.array([1.0, 0.0])
        h = np.array([[0.0, 1.0]])
        report = nce_loss(fg_batch(f, g, h))
        assert report.total == pytest.approx(np.log(1 + np.exp(-2.0)), rel=1e-9)

    def test_b_count_normalization(self):
        fg = FgItem(np.ones(2), np.zeros(2),
                    NegativeSet(np.zeros((4, 2)), list(range(4))))
        bg = BgItem(np.zeros(2), NegativeSet(np.zeros((4, 2)), list(range(4))))
        batch = NceBatch([fg], [bg], d=2)
        report = nce_loss(batch)
        assert report.b_count == 2
        assert report.total == pytest.approx((report.l_fg + report.l_bg) / 2, abs=1e-15)

    def test_empty_batch_rejected(self):
        with pytest.raises(ConfigError):
            NceBatch([], [], d=3)

    def test_loss_positive_for_finite_sims(self, rng):
        for _ in range(20):
            d, m = 4, 3
            batch = NceBatch(
                [FgItem(rng.normal(size=d), rng.normal(size=d),
                        NegativeSet(rng.normal(size=(m, d)), list(range(m))))],
                [BgItem(rng.normal(size=d),
                        NegativeSet(rng.normal(size=(m, d)), list(range(m))))],
                d=d)
            report = nce_loss(batch)
            assert report.l_fg > 0.0
            assert report.l_bg > 0.0

    def test_permuting_negatives_leaves_loss_unchanged(self, rng):
        d, m = 5, 6
        f, g = rng.normal(size=d), rng.normal(size=d)
        negs = rng.normal(size=(m, d))
        base = nce_loss(fg_batch(f, g, negs)).total
        perm = rng.permutation(m)
        shuffled = nce_loss(fg_batch(f, g, negs[perm])).total
        assert shuffled == pytest.approx(base, rel=1e-15)

    def test_logit_shift_invariance(self):
        # adding c to f.g+ and every f.h_k leaves the item loss unchanged;
        # realized with f = e1 so dot products equal first coordinates
        d, m, c = 3, 4, 2.5
        f = np.zeros(d)
        f[0] = 1.0
        rng = np.random.default_rng(0)
        g = rng.normal(size=d)
        negs = rng.normal(size=(m, d))
        base = nce_loss(fg_batch(f, g, negs)).total
        g2 = g.copy()
        g2[0] += c
        negs2 = negs.copy()
        negs2[:, 0] += c
        shifted = nce_loss(fg_batch(f, g2, negs2)).total
        assert shifted == pytest.approx(base, rel=1e-12)

    def test_raising_positive_similarity_decreases_loss(self, rng):
        d, m = 4, 3
        f = rng.normal(size=d)
        g = rng.normal(size=d)
        negs = rng.normal(size=(m, d))
        base = nce_loss(fg_batch(f, g, negs)).total
        better = nce_loss(fg_batch(f, g + 0.5 * f / (f @ f), negs)).total
        assert better < base

    def test_stable_at_magnitude_700(self):
        f = np.array([700.0, 0.0])
        g = np.array([1.0, 0.0])       # f.g+ = 700
        negs = np.array([[-1.0, 0.0]])  # f.h = -700
        report = nce_loss(fg_batch(f, g, negs))
        assert np.isfinite(report.total)
        bg = bg_batch(f, np.array([[1.0, 0.0]]))  # bg logit 700
        assert np.isfinite(nce_loss(bg).total)

    @given(m=st.integers(min_value=1, max_value=8),
           scale=st.floats(min_value=0.1, max_value=5.0))
    @settings(max_examples=30, deadline=None)
    def test_fg_loss_bounded_below_by_zero(self, m, scale):
        rng = np.random.default_rng(7)
        d = 3
        batch = fg_batch(scale * rng.normal(size=d), rng.normal(size=d),
                         rng.normal(size=(m, d)))
        assert nce_loss(batch).l_fg > 0.0


class TestNceGrad:
    def test_saturated_softmax_gradients_vanish(self):
        f = np.array([30.0, 0.0])
        g = np.array([1.0, 0.0])        # f.g+ = 30 >> negatives
        negs = np.array([[-1.0, 0.0]])
        grads = nce_grad(fg_batch(f, g, negs))
        assert np.linalg.norm(grads.fg[0].d_f) < 1e-9
        assert np.linalg.norm(grads.fg[0].d_g_plus) < 1e-9
        assert np.linalg.norm(grads.fg[0].d_negatives) < 1e-9

    def test_symmetric_item_logit_gradient_is_minus_half(self):
        # all sims equal, m=1: p = (1/2, 1/2); d(loss)/d(f.g+) = p0 - 1 = -1/2.
        # realize d/d(g+ first coord) with f = e1: equals (p0-1) * f[0] = -0.5
        f = np.array([1.0, 0.0])
        g = np.array([0.0, 1.0])        # f.g+ = 0
        negs = np.array([[0.0, 2.0]])   # f.h = 0
        grads = nce_grad(fg_batch(f, g, negs))
        assert grads.fg[0].d_g_plus[0] == pytest.approx(-0.5, abs=1e-12)
        assert grads.fg[0].d_negatives[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_finite_difference_random_batches(self, rng):
        h = 1e-5
        for trial in range(8):
            d = int(rng.integers(2, 9))
            m = int(rng.integers(1, 5))
            n_fg = int(rng.integers(1, 3))
            n_bg = int(rng.integers(0, 3))
            if n_fg + n_bg == 0:
                n_fg = 1
            fg_items = [
                (rng.normal(size=d), rng.normal(size=d), rng.normal(size=(m, d)))
                for _ in range(n_fg)]
            bg_items = [(rng.normal(size=d), rng.normal(size=(m, d)))
                        for _ in range(n_bg)]

            def build(fgs, bgs):
                return NceBatch(
                    [FgItem(f.copy(), g.copy(),
                            NegativeSet(H.copy(), list(range(len(H)))))
                     for f, g, H in fgs],
                    [BgItem(f.copy(), NegativeSet(H.copy(), list(range(len(H)))))
                     for f, H in bgs], d=d)

            grads = nce_grad(build(fg_items, bg_items))

            def fd_check(get_arr, analytic):
                # the 1e-4 floor keeps near-zero entries comparable: central
                # differences only resolve absolute error down to ~1e-10 here
                arr = get_arr()
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = nce_loss(build(fg_items, bg_items)).total
                    arr[idx] = orig - h
                    down = nce_loss(build(fg_items, bg_items)).total
                    arr[idx] = orig
                    fd = (up - down) / (2 * h)
                    denom = max(abs(fd), abs(analytic[idx]), 1e-4)
                    assert abs(fd - analytic[idx]) / denom < 1e-6

            for j, (f, g, H) in enumerate(fg_items):
                fd_check(lambda f=f: f, grads.fg[j].d_f)
                fd_check(lambda g=g: g, grads.fg[j].d_g_plus)
                fd_check(lambda H=H: H, grads.fg[j].d_negatives)
            for j, (f, H) in enumerate(bg_items):
                fd_check(lambda f=f: f, grads.bg[j].d_f)
                fd_check(lambda H=H: H, grads.bg[j].d_negatives)
