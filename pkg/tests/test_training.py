import math

import numpy as np
import pytest

from rodfind import dataset as ds
from rodfind import encoders as enc
from rodfind import training as tr
from rodfind.errors import TrainingError

from test_encoders import tiny_params


def brute_force_mine(dists, ids, margin):
    """Independent enumeration over every (anchor, negative) pair."""
    out = []
    for direction in ("t2s", "s2t"):
        d = dists if direction == "t2s" else dists.T
        for i in range(d.shape[0]):
            d_ap = d[i, i]
            best = None
            # prefer the smallest semi-hard d_an; otherwise smallest overall
            for j in range(d.shape[0]):
                if ids[j] == ids[i]:
                    continue
                is_semi = d_ap < d[i, j] < d_ap + margin
                key = (0 if is_semi else 1, d[i, j], j)
                if best is None or key < best[0]:
                    best = (key, j)
            j = best[1]
            out.append((i, j, direction, tr.classify_triplet(d_ap, d[i, j], margin)))
    return out


class TestPairwiseDistances:
    def test_identical_orthogonal_antipodal(self):
        e = np.eye(3)[:2]
        assert tr.pairwise_distances(e, e)[0, 0] == 0.0
        assert tr.pairwise_distances(e[:1], e[1:])[0, 0] == pytest.approx(np.sqrt(2))
        assert tr.pairwise_distances(e[:1], -e[:1])[0, 0] == pytest.approx(2.0)

    def test_unit_vectors_stay_within_two(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(20, 16))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        s = rng.normal(size=(20, 16))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        d = tr.pairwise_distances(t, s)
        assert (d >= 0).all() and (d <= 2 + 1e-12).all()

    def test_dimension_mismatch(self):
        with pytest.raises(TrainingError, match="disagree"):
            tr.pairwise_distances(np.zeros((2, 3)), np.zeros((2, 4)))


class TestTripletLoss:
    def test_arithmetic(self):
        assert tr.triplet_loss(0.5, 1.0, 0.2) == 0.0
        assert tr.triplet_loss(1.0, 0.5, 0.2) == pytest.approx(0.7)
        assert tr.triplet_loss(0.7, 0.7, 0.15) == pytest.approx(0.15)

    def test_bounded_by_margin_plus_two(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            d_ap, d_an = rng.uniform(0, 2, 2)
            m = rng.uniform(0.01, 1)
            assert 0 <= tr.triplet_loss(d_ap, d_an, m) <= m + 2


class TestClassify:
    def test_spec_examples(self):
        assert tr.classify_triplet(0.1, 0.9, 0.2) == tr.EASY
        assert tr.classify_triplet(0.1, 0.9, 1.0) == tr.SEMI_HARD
        assert tr.classify_triplet(0.9, 0.1, 0.2) == tr.HARD

    def test_boundaries(self):
        assert tr.classify_triplet(0.5, 0.5, 0.2) == tr.HARD
        assert tr.classify_triplet(0.5, 0.7, 0.2) == tr.EASY

    def test_partition_and_loss_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(5000):
            d_ap, d_an = rng.uniform(0, 2, 2)
            margin = rng.uniform(0.01, 1.0)
            kind = tr.classify_triplet(d_ap, d_an, margin)
            if d_an < d_ap:
                assert kind == tr.HARD
            elif d_ap + margin < d_an:
                assert kind == tr.EASY
            elif d_ap < d_an < d_ap + margin:
                assert kind == tr.SEMI_HARD
            loss = tr.triplet_loss(d_ap, d_an, margin)
            assert (loss == 0) == (kind == tr.EASY)


class TestMining:
    def test_two_by_two_example(self):
        d = np.array([[0.1, 0.9], [0.8, 0.2]])
        triplets = tr.mine_semihard(d, ["a", "b"], margin=1.0)
        t2s = [t for t in triplets if t.direction == "t2s"]
        assert [(t.anchor, t.negative, t.kind) for t in t2s] == [
            (0, 1, tr.SEMI_HARD), (1, 0, tr.SEMI_HARD)]

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            d = rng.uniform(0, 2, size=(n, n))
            margin = float(rng.uniform(0.05, 0.8))
            ids = [f"s{i}" for i in range(n)]
            mined = tr.mine_semihard(d, ids, margin)
            expected = brute_force_mine(d, ids, margin)
            assert [(t.anchor, t.negative, t.direction, t.kind) for t in mined] == expected

    def test_fallback_when_everything_is_easy(self):
        # positives at distance 0.1, negatives far beyond the margin band
        d = np.array([[0.1, 1.5, 1.8],
                      [1.9, 0.1, 1.6],
                      [1.7, 1.5, 0.1]])
        triplets = tr.mine_semihard(d, list("abc"), margin=0.2)
        for t in triplets:
            row = d if t.direction == "t2s" else d.T
            negatives = [row[t.anchor, j] for j in range(3) if j != t.anchor]
            assert row[t.anchor, t.negative] == min(negatives)
            assert t.kind == tr.EASY

    def test_batch_of_one_rejected(self):
        with pytest.raises(TrainingError):
            tr.mine_semihard(np.zeros((1, 1)), ["a"], 0.2)

    def test_duplicate_ids_are_not_negatives(self):
        d = np.array([[0.3, 0.4, 1.0],
                      [0.4, 0.3, 1.1],
                      [1.0, 1.1, 0.2]])
        triplets = tr.mine_semihard(d, ["x", "x", "y"], margin=0.5)
        for t in triplets:
            assert t.negative != t.anchor
            assert ["x", "x", "y"][t.negative] != ["x", "x", "y"][t.anchor]


class TestCombinedLoss:
    def test_mu_weighting(self):
        rng = np.random.default_rng(4)
        d = rng.uniform(0, 2, size=(4, 4))
        ids = list("abcd")
        total1, t2s, s2t, _ = tr.combined_loss_from_distances(d, ids, 0.2, 1.0)
        assert total1 == pytest.approx(t2s + s2t)
        total0, t2s0, _, _ = tr.combined_loss_from_distances(d, ids, 0.2, 0.0)
        assert total0 == pytest.approx(t2s0) == pytest.approx(t2s)
        total3, _, s2t3, _ = tr.combined_loss_from_distances(d, ids, 0.2, 3.0)
        assert total3 == pytest.approx(t2s + 3.0 * s2t3)
        assert s2t3 == pytest.approx(s2t)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(5)
        d = rng.uniform(0, 2, size=(6, 6))
        ids = [f"s{i}" for i in range(6)]
        base = tr.combined_loss_from_distances(d, ids, 0.3, 1.0)[0]
        perm = rng.permutation(6)
        shuffled = tr.combined_loss_from_distances(d[np.ix_(perm, perm)],
                                                   [ids[p] for p in perm], 0.3, 1.0)[0]
        assert shuffled == pytest.approx(base)

    def test_transpose_symmetry_at_mu_one(self):
        rng = np.random.default_rng(6)
        d = rng.uniform(0, 2, size=(5, 5))
        ids = [f"s{i}" for i in range(5)]
        a = tr.combined_loss_from_distances(d, ids, 0.25, 1.0)[0]
        b = tr.combined_loss_from_distances(d.T, ids, 0.25, 1.0)[0]
        assert a == pytest.approx(b)

    def test_all_easy_batch_is_zero(self):
        d = np.array([[0.05, 1.5], [1.6, 0.05]])
        total, *_ = tr.combined_loss_from_distances(d, ["a", "b"], 0.2, 1.0)
        assert total == 0.0


class TestGradients:
    def batch(self):
        rng = np.random.default_rng(5)
        tokens = rng.integers(2, 8, size=(2, 8))
        lengths = np.array([5, 7])
        grids = (rng.random((2, 16, 16, 16)) < 0.4).astype(np.float64)
        return tokens, lengths, grids, ["a", "b"]

    def test_loss_matches_forward_only_evaluation(self):
        tp, sp = tiny_params(jitter=7)
        tokens, lengths, grids, ids = self.batch()
        cfg = tr.TrainerConfig(batch_size=2)
        loss, _, _, _ = tr.loss_and_gradients(tokens, lengths, grids, ids, tp, sp, cfg)
        assert loss == pytest.approx(
            tr.combined_loss(tokens, lengths, grids, ids, tp, sp, cfg))

    def test_gradients_match_finite_differences(self):
        tp, sp = tiny_params(jitter=7)
        tokens, lengths, grids, ids = self.batch()
        cfg = tr.TrainerConfig(batch_size=2)
        loss, tg, sg, _ = tr.loss_and_gradients(tokens, lengths, grids, ids, tp, sp, cfg)

        def total():
            return tr.combined_loss(tokens, lengths, grids, ids, tp, sp, cfg)

        h = 1e-5
        worst = 0.0
        for params, grads in ((tp, tg), (sp, sg)):
            for name, array in params.named_arrays():
                flat = array.ravel()
                g = grads[name].ravel()
                rng = np.random.default_rng(abs(hash(name)) % 2 ** 31)
                for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                    old = flat[i]
                    flat[i] = old + h
                    up = total()
                    flat[i] = old - h
                    down = total()
                    flat[i] = old
                    fd = (up - down) / (2 * h)
                    worst = max(worst, abs(g[i] - fd) / max(1e-8, abs(g[i]), abs(fd)))
        assert worst < 1e-4

    def test_all_easy_batch_has_exactly_zero_gradients(self):
        # strongly perturbed encoders separate this batch well enough that
        # every mined triplet is easy at a 1e-3 margin (seeds found by scan)
        tp, sp = tiny_params()
        jr = np.random.default_rng(21)
        for _, a in tp.named_arrays() + sp.named_arrays():
            a += jr.uniform(-0.8, 0.8, size=a.shape)
        rng = np.random.default_rng(1021)
        tokens = rng.integers(2, 8, size=(2, 8))
        lengths = np.array([5, 7])
        grids = (rng.random((2, 16, 16, 16)) < 0.4).astype(np.float64)
        cfg = tr.TrainerConfig(batch_size=2, margin=1e-3)
        loss, tg, sg, stats = tr.loss_and_gradients(tokens, lengths, grids,
                                                    ["a", "b"], tp, sp, cfg)
        assert loss == 0.0
        assert all(t.kind == tr.EASY for t in stats["triplets"])
        for grads in (tg, sg):
            for g in grads.values():
                assert (g == 0).all()

    def test_mu_scales_s2t_gradient_contribution(self):
        tp, sp = tiny_params(jitter=7)
        tokens, lengths, grids, ids = self.batch()
        base = tr.TrainerConfig(batch_size=2, mu=0.0)
        doubled = tr.TrainerConfig(batch_size=2, mu=2.0)
        _, tg0, _, _ = tr.loss_and_gradients(tokens, lengths, grids, ids, tp, sp, base)
        _, tg2, _, _ = tr.loss_and_gradients(tokens, lengths, grids, ids, tp, sp, doubled)
        _, tg1, _, _ = tr.loss_and_gradients(tokens, lengths, grids, ids, tp, sp,
                                             tr.TrainerConfig(batch_size=2, mu=1.0))
        for name in tg0:
            s2t_part = tg1[name] - tg0[name]
            assert np.allclose(tg2[name], tg0[name] + 2.0 * s2t_part, atol=1e-12)


class TestFit:
    def corpus(self):
        return ds.generate_variants(bases=1, per_base=6, seed=5)

    def test_zero_learning_rate_leaves_params_bitwise_unchanged(self):
        samples = self.corpus()
        cfg = tr.TrainerConfig(batch_size=3, learning_rate=0.0, epochs=2, seed=1)
        result = tr.fit(samples, [], cfg)
        fresh_t, fresh_s = enc.init_params(result.vocab.size, cfg.seed,
                                           enc.TextEncoderConfig(result.vocab.size))
        for (n1, a), (n2, b) in zip(result.text_params.named_arrays(),
                                    fresh_t.named_arrays()):
            assert np.array_equal(a, b), n1
        for (n1, a), (n2, b) in zip(result.shape_params.named_arrays(),
                                    fresh_s.named_arrays()):
            assert np.array_equal(a, b), n1

    def test_logged_losses_nonnegative_and_complete(self):
        samples = self.corpus()
        cfg = tr.TrainerConfig(batch_size=3, learning_rate=1e-4, epochs=3, seed=2)
        result = tr.fit(samples, samples[:2], cfg)
        assert [row.epoch for row in result.log] == [1, 2, 3]
        assert all(row.train_loss >= 0 for row in result.log)
        assert all(0 <= row.val_recall1 <= 1 for row in result.log)

    def test_same_seed_reproduces_parameters(self):
        samples = self.corpus()
        cfg = tr.TrainerConfig(batch_size=3, learning_rate=1e-4, epochs=2, seed=3)
        a = tr.fit(samples, [], cfg)
        b = tr.fit(samples, [], cfg)
        for (_, x), (_, y) in zip(a.text_params.named_arrays(),
                                  b.text_params.named_arrays()):
            assert np.array_equal(x, y)

    def test_empty_train_set_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            tr.fit([], [], tr.TrainerConfig())


class TestRecall:
    def test_perfect_alignment_gives_recall_one(self):
        rng = np.random.default_rng(7)
        embs = rng.normal(size=(10, 8))
        embs /= np.linalg.norm(embs, axis=1, keepdims=True)
        ids = [f"s{i:02d}" for i in range(10)]
        assert tr.recall_from_embeddings(embs, embs, ids, 1) == 1.0

    def test_random_embeddings_hit_one_over_gallery(self):
        rng = np.random.default_rng(8)
        gallery = 10
        trials = 400
        hits = 0.0
        for _ in range(trials):
            t = rng.normal(size=(gallery, 16))
            t /= np.linalg.norm(t, axis=1, keepdims=True)
            s = rng.normal(size=(gallery, 16))
            s /= np.linalg.norm(s, axis=1, keepdims=True)
            ids = [f"s{i:02d}" for i in range(gallery)]
            hits += tr.recall_from_embeddings(t, s, ids, 1)
        mean = hits / trials
        p = 1.0 / gallery
        sigma = math.sqrt(p * (1 - p) / (trials * gallery))
        assert abs(mean - p) < 3 * sigma

    def test_monotone_in_k_and_total_at_gallery_size(self):
        rng = np.random.default_rng(9)
        t = rng.normal(size=(8, 6))
        s = rng.normal(size=(8, 6))
        ids = [f"s{i}" for i in range(8)]
        values = [tr.recall_from_embeddings(t, s, ids, k) for k in range(1, 9)]
        assert values == sorted(values)
        assert values[-1] == 1.0

    def test_ties_break_by_ascending_id(self):
        texts = np.array([[1.0, 0.0], [0.0, 1.0]])
        shapes = np.array([[1.0, 0.0], [1.0, 0.0]])  # both texts see a tie or not
        # text 0 is at distance 0 from both shapes; the tie resolves to id "a"
        # (gallery index 1), so text 0 misses and text 1 hits
        assert tr.recall_from_embeddings(texts, shapes, ["b", "a"], 1) == 0.5

    def test_empty_eval_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            tr.recall_from_embeddings(np.zeros((0, 4)), np.zeros((0, 4)), [], 1)
