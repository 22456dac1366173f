import numpy as np
import pytest

from calm.core import EmbeddingSet, cos_to_l2, normalize_rows
from calm.errors import NoValidTriplets, ShapeMismatch
from calm.losses import (
    CamConfig,
    cam_loss,
    contrastive_loss,
    final_loss,
    grad_wrt_embeddings,
    triplet_loss,
)
from calm.pairs import PairList, ScoredPairSet, exhaustive_pairs, score_pairs

from _oracles import directional_derivative, tangent_directions


def scored_from_similarities(entries) -> ScoredPairSet:
    """entries: (anchor_class, is_positive, similarity)."""
    anchors = np.array([e[0] for e in entries], dtype=np.int64)
    is_pos = np.array([e[1] for e in entries], dtype=bool)
    s = np.array([e[2] for e in entries], dtype=np.float64)
    n = len(entries)
    pl = PairList(np.arange(n) * 2, np.arange(n) * 2 + 1, anchors, is_pos)
    return ScoredPairSet(pl, s, np.asarray(cos_to_l2(s)))


def random_batch(rng, n_classes=4, per_class=4, dim=8):
    labels = np.repeat(np.arange(n_classes), per_class)
    vectors = normalize_rows(rng.standard_normal((labels.shape[0], dim)))
    return EmbeddingSet(vectors, labels)


def safe_margin(base: float, similarities: np.ndarray, clearance: float = 1e-4) -> float:
    """Nudge a margin until no similarity sits within `clearance` of it."""
    m = base
    while np.any(np.abs(similarities - m) < clearance):
        m += 3.7 * clearance
    return m


class TestCamConfig:
    def test_accepts_valid(self):
        CamConfig(0.7, 0.3)

    def test_rejects_inverted_margins(self):
        with pytest.raises(ValueError):
            CamConfig(0.3, 0.7)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            CamConfig(1.0, 0.3)
        with pytest.raises(ValueError):
            CamConfig(0.7, -1.0)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            CamConfig(0.7, 0.3, lambda_plus=-1.0)


class TestCamLoss:
    def test_no_violation_zero_count(self):
        scored = scored_from_similarities([(0, True, 0.8)])
        res = cam_loss(scored, CamConfig(0.7, 0.3))
        assert res.value == 0.0 and res.pos_selected == 0

    def test_single_positive_violation(self):
        scored = scored_from_similarities([(0, True, 0.5)])
        res = cam_loss(scored, CamConfig(0.7, 0.3))
        assert res.value == pytest.approx(0.2, abs=1e-12)
        assert res.pos_selected == 1

    def test_negative_selection(self):
        scored = scored_from_similarities([(0, False, 0.6), (0, False, 0.2)])
        res = cam_loss(scored, CamConfig(0.7, 0.5))
        assert res.value == pytest.approx(0.1, abs=1e-12)
        assert res.neg_selected == 1

    def test_boundary_pair_selected_contributes_zero(self):
        scored = scored_from_similarities([(0, True, 0.7), (0, False, 0.3)])
        res = cam_loss(scored, CamConfig(0.7, 0.3))
        assert res.pos_selected == 1 and res.neg_selected == 1
        assert res.value == 0.0
        # selected boundary pairs still carry gradient
        assert res.dsim[0] == -1.0 and res.dsim[1] == 1.0

    def test_empty_selection_no_error(self):
        scored = scored_from_similarities([(0, True, 0.9), (0, False, -0.5)])
        res = cam_loss(scored, CamConfig(0.7, 0.3))
        assert res.value == 0.0
        assert np.all(res.dsim == 0.0)

    def test_empty_batch(self):
        scored = scored_from_similarities([])
        res = cam_loss(scored, CamConfig(0.7, 0.3))
        assert res.value == 0.0

    def test_lambda_scaling_exact(self):
        rng = np.random.default_rng(3)
        entries = [(0, bool(b), float(s)) for b, s in
                   zip(rng.integers(0, 2, 30), rng.uniform(-1, 1, 30))]
        scored = scored_from_similarities(entries)
        one = cam_loss(scored, CamConfig(0.6, 0.2, 1.0, 1.0))
        two = cam_loss(scored, CamConfig(0.6, 0.2, 2.0, 2.0))
        assert two.value == 2.0 * one.value

    def test_zero_iff_no_strict_violation(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            entries = [(0, bool(b), float(s)) for b, s in
                       zip(rng.integers(0, 2, 20), rng.uniform(-1, 1, 20))]
            scored = scored_from_similarities(entries)
            cfg = CamConfig(float(rng.uniform(0.2, 0.9)), float(rng.uniform(-0.9, 0.1)))
            res = cam_loss(scored, cfg)
            s = scored.similarity
            pos = scored.pairs.is_positive
            violated = bool(
                np.any(pos & (s < cfg.m_plus)) or np.any(~pos & (s > cfg.m_minus))
            )
            assert (res.value > 0.0) == violated

    def test_per_class_margins(self):
        scored = scored_from_similarities([(0, True, 0.5), (1, True, 0.5)])
        cfg = CamConfig(0.7, 0.3)
        res = cam_loss(scored, cfg, m_plus_per_class={0: 0.6, 1: 0.4})
        # class 0 violates (0.5 <= 0.6), class 1 does not (0.5 > 0.4)
        assert res.pos_selected == 1
        assert res.value == pytest.approx(0.1, abs=1e-12)

    def test_numerator_monotone_in_m_plus(self):
        rng = np.random.default_rng(5)
        entries = [(0, True, float(s)) for s in rng.uniform(-1, 1, 25)]
        scored = scored_from_similarities(entries)
        s = scored.similarity

        def numerator(m):
            sel = s <= m
            return float(np.sum(m - s[sel]))

        grid = np.linspace(-0.8, 0.9, 30)
        values = [numerator(m) for m in grid]
        assert np.all(np.diff(values) >= -1e-15)

    def test_canonical_order_reduction_bitwise(self):
        rng = np.random.default_rng(6)
        es = random_batch(rng)
        plist = exhaustive_pairs(es)
        scored = score_pairs(es, plist)
        cfg = CamConfig(0.5, 0.0)
        base = cam_loss(scored, cfg)

        perm = rng.permutation(len(plist))
        shuffled = PairList(
            plist.index_a[perm], plist.index_b[perm],
            plist.anchor_class[perm], plist.is_positive[perm],
        ).sorted_canonical()
        rescored = score_pairs(es, shuffled)
        again = cam_loss(rescored, cfg)
        assert again.value == base.value
        assert np.array_equal(again.dsim, base.dsim)


class TestContrastive:
    def test_perfectly_placed_batch(self):
        scored = scored_from_similarities([(0, True, 1.0), (0, False, -0.2)])
        res = contrastive_loss(scored, 0.0, 0.5)
        assert res.value == 0.0

    def test_single_positive_pull(self):
        scored = scored_from_similarities([(0, True, 0.9)])
        res = contrastive_loss(scored, 0.0, 0.5)
        assert res.value == pytest.approx(0.1, abs=1e-12)

    def test_satisfied_negative(self):
        scored = scored_from_similarities([(0, False, -1.0)])
        res = contrastive_loss(scored, 0.0, 0.5)
        assert res.value == 0.0


class TestTriplet:
    def three_point_batch(self, s: float):
        # three unit vectors with pairwise cosine s, two sharing a class
        gram = np.full((3, 3), s)
        np.fill_diagonal(gram, 1.0)
        vectors = np.linalg.cholesky(gram)
        return EmbeddingSet(normalize_rows(vectors), np.array([0, 0, 1]))

    def test_satisfied_triplet(self):
        es = random_batch(np.random.default_rng(7), n_classes=2, per_class=2, dim=4)
        scored = score_pairs(es, exhaustive_pairs(es))
        # force satisfaction with a tiny margin after inspecting gaps
        res = triplet_loss(scored, es.labels, margin=-2.0)
        assert res.value == 0.0

    def test_flat_configuration_hand_value(self):
        es = self.three_point_batch(0.5)
        scored = score_pairs(es, exhaustive_pairs(es))
        res = triplet_loss(scored, es.labels, margin=0.3)
        assert res.value == pytest.approx(0.3, abs=1e-9)

    def test_no_triplets(self):
        es = random_batch(np.random.default_rng(8), n_classes=3, per_class=1, dim=4)
        scored = score_pairs(es, exhaustive_pairs(es))
        with pytest.raises(NoValidTriplets):
            triplet_loss(scored, es.labels, margin=0.3)


class TestFinalLoss:
    def test_zero_reg_is_identity(self):
        rng = np.random.default_rng(9)
        es = random_batch(rng)
        scored = score_pairs(es, exhaustive_pairs(es))
        base = contrastive_loss(scored, 0.0, 0.4)
        reg = cam_loss(scored, CamConfig(0.7, 0.3, lambda_plus=0.0, lambda_minus=0.0))
        assert reg.value == 0.0
        combined = final_loss(base, reg)
        assert combined.value == base.value
        assert np.array_equal(combined.dsim, base.dsim)

    def test_values_add(self):
        a = scored_from_similarities([(0, True, 0.5)])
        base = cam_loss(a, CamConfig(0.7, 0.3))
        res = final_loss(base, base)
        assert res.value == pytest.approx(2 * base.value, abs=1e-15)

    def test_shape_mismatch(self):
        from calm.losses import LossResult

        with pytest.raises(ShapeMismatch):
            final_loss(LossResult(0.0, np.zeros(3)), LossResult(0.0, np.zeros(4)))


class TestEmbeddingGradients:
    def test_zero_pair_grad_gives_zero_matrix(self):
        rng = np.random.default_rng(10)
        es = random_batch(rng)
        plist = exhaustive_pairs(es)
        grad = grad_wrt_embeddings(es, plist, np.zeros(len(plist)))
        assert np.all(grad == 0.0)

    def test_orthogonal_pair_identity(self):
        es = EmbeddingSet(np.eye(2), [0, 1])
        plist = exhaustive_pairs(es)
        grad = grad_wrt_embeddings(es, plist, np.ones(1))
        np.testing.assert_array_equal(grad[0], es.vectors[1])
        np.testing.assert_array_equal(grad[1], es.vectors[0])

    def test_gradient_is_tangent(self):
        rng = np.random.default_rng(11)
        es = random_batch(rng)
        plist = exhaustive_pairs(es)
        scored = score_pairs(es, plist)
        res = cam_loss(scored, CamConfig(0.5, 0.0))
        grad = grad_wrt_embeddings(es, plist, res.dsim)
        radial = np.einsum("ij,ij->i", grad, es.vectors)
        np.testing.assert_allclose(radial, 0.0, atol=1e-12)


def _loss_closure(kind, labels, params):
    def fn(vectors):
        es = EmbeddingSet(vectors, labels)
        plist = exhaustive_pairs(es)
        scored = score_pairs(es, plist)
        if kind == "cam":
            return cam_loss(scored, params["cfg"]).value
        if kind == "contrastive":
            return contrastive_loss(scored, params["pos_margin"], params["neg_margin"]).value
        return triplet_loss(scored, labels, params["margin"]).value

    return fn


def _analytic_result(kind, es, params):
    plist = exhaustive_pairs(es)
    scored = score_pairs(es, plist)
    if kind == "cam":
        res = cam_loss(scored, params["cfg"])
    elif kind == "contrastive":
        res = contrastive_loss(scored, params["pos_margin"], params["neg_margin"])
    else:
        res = triplet_loss(scored, es.labels, params["margin"])
    return grad_wrt_embeddings(es, plist, res.dsim), scored


@pytest.mark.parametrize("kind", ["cam", "contrastive", "triplet"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(1234)
    step = 1e-6
    checked = 0
    for _ in range(10):
        es = random_batch(
            rng,
            n_classes=int(rng.integers(2, 5)),
            per_class=int(rng.integers(2, 5)),
            dim=int(rng.integers(4, 16)),
        )
        sims = score_pairs(es, exhaustive_pairs(es)).similarity
        if kind == "cam":
            params = {
                "cfg": CamConfig(
                    safe_margin(float(np.median(sims)) + 0.1, sims),
                    safe_margin(float(np.median(sims)) - 0.2, sims),
                )
            }
        elif kind == "contrastive":
            params = {"pos_margin": 0.0, "neg_margin": safe_margin(0.1, sims)}
        else:
            pos = sims  # nudge the margin away from every pairwise gap
            gaps = (sims[None, :] - sims[:, None]).ravel()
            params = {"margin": safe_margin(0.3, -gaps)}
        grad, _ = _analytic_result(kind, es, params)
        fn = _loss_closure(kind, es.labels, params)
        for _ in range(3):
            eta = tangent_directions(es.vectors, rng)
            analytic = float(np.sum(grad * eta))
            fd = directional_derivative(fn, es.vectors, eta, step)
            err = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
            assert err <= 1e-5, f"{kind}: analytic {analytic} vs fd {fd}"
            checked += 1
    assert checked == 30
