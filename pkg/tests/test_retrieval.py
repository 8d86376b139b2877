import numpy as np
import pytest

from tupledet.errors import ConfigError, ShapeError
from tupledet.model import TupleIndex, build_tuple_index
from tupledet.retrieval import analogy_query, object_to_text, text_to_object

from test_model import identity_text_model, toy_vocab


def orthogonal_index(n=4):
    model = identity_text_model(n)
    return build_tuple_index(model, toy_vocab(np.eye(n)))


class TestObjectToText:
    def test_matching_row_ranks_first(self):
        index = orthogonal_index(4)
        res = object_to_text(index.z[2], index, k=4)
        assert res.items[0][0] == 2

    def test_k_truncates_to_vocab_size(self):
        index = orthogonal_index(3)
        res = object_to_text(np.ones(3), index, k=10)
        assert len(res.items) == 3

    def test_hand_ranked_dot_products(self):
        # rows dotted with f give (2.0, -1.0, 0.5) -> order (0, 2, 1)
        index = TupleIndex(np.array([[2.0], [-1.0], [0.5]]),
                           toy_vocab(np.zeros((3, 2))))
        res = object_to_text(np.array([1.0]), index, k=3)
        assert [i for i, _ in res.items] == [0, 2, 1]
        assert [s for _, s in res.items] == [2.0, 0.5, -1.0]

    def test_empty_index_rejected(self):
        from tupledet.model import TupleVocab
        index = TupleIndex(np.zeros((0, 3)), TupleVocab([]))
        with pytest.raises(ConfigError):
            object_to_text(np.zeros(3), index, k=1)

    def test_similarities_non_increasing_and_ties_by_id(self):
        index = TupleIndex(np.array([[1.0], [1.0], [2.0]]),
                           toy_vocab(np.zeros((3, 2))))
        res = object_to_text(np.array([1.0]), index, k=3)
        assert [i for i, _ in res.items] == [2, 0, 1]
        sims = [s for _, s in res.items]
        assert all(a >= b for a, b in zip(sims, sims[1:]))

    def test_cosine_metric(self):
        index = TupleIndex(np.array([[10.0, 0.0], [0.0, 1.0]]),
                           toy_vocab(np.zeros((2, 2))))
        # dot favors the long row even at a worse angle
        q = np.array([0.1, 1.0])
        by_dot = object_to_text(q, index, k=1, metric="dot")
        by_cos = object_to_text(q, index, k=1, metric="cosine")
        assert by_dot.items[0][0] == 0
        assert by_cos.items[0][0] == 1


class TestTextToObject:
    def test_single_object_always_returned(self):
        res = text_to_object(np.array([1.0, 0.0]),
                             [("obj", np.array([0.0, -5.0]))], k=3)
        assert [i for i, _ in res.items] == ["obj"]

    def test_orthonormal_query_finds_itself(self):
        objects = [(f"o{i}", np.eye(4)[i]) for i in range(4)]
        res = text_to_object(np.eye(4)[1], objects, k=1)
        assert res.items[0][0] == "o1"

    def test_hand_ranked_mirror_case(self):
        objects = [("0", np.array([2.0])), ("1", np.array([-1.0])),
                   ("2", np.array([0.5]))]
        res = text_to_object(np.array([1.0]), objects, k=3)
        assert [i for i, _ in res.items] == ["0", "2", "1"]

    def test_empty_objects_gives_empty_result(self):
        res = text_to_object(np.ones(3), [], k=2)
        assert res.items == []

    def test_appending_low_similarity_items_keeps_top_k(self):
        objects = [("hot", np.array([5.0])), ("warm", np.array([1.0]))]
        res_before = text_to_object(np.array([1.0]), objects, k=2)
        padded = objects + [(f"cold{i}", np.array([0.0])) for i in range(5)]
        res_after = text_to_object(np.array([1.0]), padded, k=2)
        assert res_before.items == res_after.items

    def test_transposed_roles_share_the_similarity_matrix(self, rng):
        # both directions rank by the same S = objects @ tuples.T, so the
        # pairwise orderings they induce must agree with S itself
        objects = rng.normal(size=(5, 4))
        index = TupleIndex(rng.normal(size=(6, 4)), toy_vocab(np.zeros((6, 2))))
        sim = objects @ index.z.T
        for i in range(5):
            res = object_to_text(objects[i], index, k=6)
            sims = dict(res.items)
            for t in range(6):
                assert sims[t] == pytest.approx(sim[i, t], rel=1e-12)
        obj_list = [(i, objects[i]) for i in range(5)]
        for t in range(6):
            res = text_to_object(index.z[t], obj_list, k=5)
            sims = dict(res.items)
            for i in range(5):
                assert sims[i] == pytest.approx(sim[i, t], rel=1e-12)


class TestAnalogyQuery:
    def _basis_corpus(self, n=4):
        return [(i, np.eye(n)[i]) for i in range(n)]

    def test_b_equals_c_reduces_to_direct_query(self):
        corpus = self._basis_corpus()
        rng = np.random.default_rng(0)
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        direct = analogy_query(a, b, b, corpus, k=4, exclude_inputs=False)
        plain = analogy_query(a, np.zeros(4), np.zeros(4), corpus, k=4,
                              exclude_inputs=False)
        assert [i for i, _ in direct.items] == [i for i, _ in plain.items]

    def test_basis_arithmetic(self):
        corpus = self._basis_corpus()
        e1, e2 = np.eye(4)[0], np.eye(4)[1]
        res = analogy_query(e1, e1, e2, corpus, k=1, exclude_inputs=False)
        assert res.items[0][0] == 1

    def test_exclude_inputs_drops_exact_matches(self):
        corpus = self._basis_corpus()
        e1, e2 = np.eye(4)[1], np.eye(4)[2]
        res = analogy_query(e2, e1, e1, corpus, k=4, exclude_inputs=True)
        # a == e2 and b == c == e1 are corpus members 2 and 1; both drop
        assert {i for i, _ in res.items} == {0, 3}

    def test_planted_compositional_structure(self):
        # additive word vectors: tuple(n, c) = u_n + v_c; the analogy
        # tuple(n1,c) - word(n1) + word(n2) lands on tuple(n2, c)
        rng = np.random.default_rng(5)
        d = 12
        basis = np.linalg.qr(rng.normal(size=(d, 6)))[0].T
        u = {f"n{i}": basis[i] for i in range(3)}
        v = {f"c{j}": basis[3 + j] for j in range(3)}
        corpus = []
        ids = {}
        for i, (nw, uvec) in enumerate(sorted(u.items())):
            for j, (cw, vvec) in enumerate(sorted(v.items())):
                tid = len(corpus)
                ids[(nw, cw)] = tid
                corpus.append((tid, uvec + vvec))
        hits = 0
        total = 0
        for nw1 in u:
            for nw2 in u:
                if nw1 == nw2:
                    continue
                for cw in v:
                    a = corpus[ids[(nw1, cw)]][1]
                    res = analogy_query(a, u[nw1], u[nw2],
                                        corpus, k=1, exclude_inputs=True)
                    hits += res.items[0][0] == ids[(nw2, cw)]
                    total += 1
        assert hits == total

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            analogy_query(np.ones(3), np.ones(2), np.ones(3), [], k=1)

    def test_corpus_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            analogy_query(np.ones(3), np.ones(3), np.ones(3),
                          [("x", np.ones(2))], k=1)

    def test_deterministic_tie_order(self):
        corpus = [(3, np.zeros(2)), (1, np.zeros(2)), (2, np.ones(2))]
        res = analogy_query(np.ones(2), np.ones(2), np.ones(2), corpus, k=3,
                            exclude_inputs=False)
        assert [i for i, _ in res.items] == [2, 1, 3]
