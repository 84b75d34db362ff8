"""Contrastive-loss oracles: closed forms and independent brute-force sums."""

import math

import numpy as np
import pytest

from avw2 import autodiff as ad
from avw2 import objectives as obj
from helpers import check_gradients


def brute_force_stream_loss(pred, targets, positions, neg_rows, kappa,
                            neg_source=None):
    """Two-loop float64 evaluation: mean over masked t of
    -log softmax over {target_t} u {negatives drawn for t}."""
    neg_source = targets if neg_source is None else neg_source

    def cos(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    losses = []
    for t, row in zip(positions, neg_rows):
        sims = [cos(pred[t], targets[t])] + [cos(pred[t], neg_source[n]) for n in row]
        e = [math.exp(s / kappa) for s in sims]
        losses.append(-math.log(e[0] / sum(e)))
    return sum(losses) / len(losses)


def random_case(rng, T=8, d=6, n_masked=4, k=3, dtype=np.float64):
    pred = rng.normal(size=(T, d)).astype(dtype)
    targets = rng.normal(size=(T, d)).astype(dtype)
    positions = tuple(sorted(rng.choice(T, size=n_masked, replace=False).tolist()))
    negs = obj.sample_negatives(positions, k, seed=int(rng.integers(1 << 30)))
    return pred, targets, positions, negs


class TestCosine:
    def test_orthogonal(self):
        s = obj.cosine_sim(ad.Tensor(np.array([1.0, 0.0])), ad.Tensor(np.array([0.0, 1.0])))
        assert s.item() == pytest.approx(0.0, abs=1e-7)

    def test_scale_invariance(self):
        s = obj.cosine_sim(ad.Tensor(np.array([2.0, 0.0])), ad.Tensor(np.array([1.0, 0.0])))
        assert s.item() == pytest.approx(1.0, rel=1e-6)

    def test_analytic_value(self):
        s = obj.cosine_sim(ad.Tensor(np.array([1.0, 1.0])), ad.Tensor(np.array([1.0, 0.0])))
        assert s.item() == pytest.approx(1 / math.sqrt(2), rel=1e-6)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            obj.cosine_sim(ad.Tensor(np.zeros(3)), ad.Tensor(np.ones(3)))


class TestInfoNCE:
    def test_uniform_similarities_give_log_k_plus_1(self):
        # all candidates identical => equal sims => softmax uniform
        v = ad.Tensor(np.array([1.0, 2.0], dtype=np.float64))
        for k in (1, 4, 10):
            loss = obj.info_nce(ad.Tensor(np.array([3.0, -1.0], dtype=np.float64)),
                                v, [v] * k, temperature=0.7)
            assert loss.item() == pytest.approx(math.log(k + 1), abs=1e-6)

    def test_closed_form_opposed_pair(self):
        # K=1, sim(pred,pos)=1, sim(pred,neg)=-1, kappa=1 -> log(1+e^-2)
        pred = ad.Tensor(np.array([1.0, 0.0], dtype=np.float64))
        pos = ad.Tensor(np.array([2.0, 0.0], dtype=np.float64))
        neg = ad.Tensor(np.array([-0.5, 0.0], dtype=np.float64))
        loss = obj.info_nce(pred, pos, [neg], temperature=1.0)
        assert loss.item() == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-6)

    def test_low_temperature_sharpens(self):
        pred = ad.Tensor(np.array([1.0, 0.1], dtype=np.float64))
        pos = ad.Tensor(np.array([1.0, 0.12], dtype=np.float64))
        negs = [ad.Tensor(np.array([-1.0, 0.5], dtype=np.float64)),
                ad.Tensor(np.array([0.1, -1.0], dtype=np.float64))]
        assert obj.info_nce(pred, pos, negs, temperature=0.01).item() < 1e-3

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            vecs = rng.normal(size=(4, 5))
            loss = obj.info_nce(ad.Tensor(vecs[0]), ad.Tensor(vecs[1]),
                                [ad.Tensor(v) for v in vecs[2:]], temperature=0.3)
            assert loss.item() >= 0.0

    def test_candidate_rescaling_invariance(self):
        rng = np.random.default_rng(1)
        vecs = rng.normal(size=(5, 6))
        base = obj.info_nce(ad.Tensor(vecs[0]), ad.Tensor(vecs[1]),
                            [ad.Tensor(v) for v in vecs[2:]], temperature=0.2).item()
        scaled = obj.info_nce(ad.Tensor(vecs[0]), ad.Tensor(vecs[1]),
                              [ad.Tensor(vecs[2] * 7.0)] + [ad.Tensor(v) for v in vecs[3:]],
                              temperature=0.2).item()
        assert abs(base - scaled) < 1e-5


class TestSampleNegatives:
    def test_two_positions_forced_choice(self):
        negs = obj.sample_negatives((3, 9), k=1, seed=0)
        assert negs.indices == ((9,), (3,))

    def test_deterministic(self):
        a = obj.sample_negatives((1, 4, 7, 8), k=5, seed=42)
        b = obj.sample_negatives((1, 4, 7, 8), k=5, seed=42)
        assert a == b

    def test_too_few_positions_rejected(self):
        with pytest.raises(ValueError):
            obj.sample_negatives((3,), k=2, seed=0)

    def test_never_self(self):
        for seed in range(30):
            negs = obj.sample_negatives(tuple(range(6)), k=8, seed=seed)
            for pos, row in zip(negs.positions, negs.indices):
                assert pos not in row

    def test_uniform_distribution_chi_squared(self):
        from scipy.stats import chisquare
        positions = tuple(range(6))
        counts = np.zeros(6)
        for seed in range(2500):
            negs = obj.sample_negatives(positions, k=4, seed=seed)
            for row in negs.indices[:1]:  # draws for t=0: candidates 1..5
                for n in row:
                    counts[n] += 1
        assert chisquare(counts[1:]).pvalue > 0.01


class TestStreamLosses:
    def test_c1_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            pred, targets, positions, negs = random_case(rng)
            fast = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs,
                               obj.LossConfig(temperature=0.17, n_negatives=3)).item()
            slow = brute_force_stream_loss(pred, targets, positions, negs.indices, 0.17)
            assert fast == pytest.approx(slow, abs=1e-6)

    def test_perfect_prediction_low_temp(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(6, 5))
        positions = (1, 2, 4)
        negs = obj.sample_negatives(positions, k=2, seed=7)
        loss = obj.loss_c1(ad.Tensor(z.copy()), ad.Tensor(z), positions, negs,
                           obj.LossConfig(temperature=0.01, n_negatives=2))
        assert loss.item() < 1e-3

    def test_single_masked_position_rejected(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(5, 3))
        with pytest.raises(ValueError):
            obj.sample_negatives((2,), k=1, seed=0)
        negs = obj.sample_negatives((1, 2), k=1, seed=0)
        with pytest.raises(ValueError):
            obj.loss_c1(ad.Tensor(z), ad.Tensor(z), (2,), negs, obj.LossConfig())

    def test_sa_is_structurally_identical_to_c1(self):
        rng = np.random.default_rng(5)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.3)
        a = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg).item()
        b = obj.loss_sa(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg).item()
        assert a == b

    def test_sa_matches_brute_force(self):
        rng = np.random.default_rng(6)
        pred, targets, positions, negs = random_case(rng, T=10, n_masked=5, k=4)
        fast = obj.loss_sa(ad.Tensor(pred), ad.Tensor(targets), positions, negs,
                           obj.LossConfig(temperature=0.25, n_negatives=4)).item()
        slow = brute_force_stream_loss(pred, targets, positions, negs.indices, 0.25)
        assert fast == pytest.approx(slow, abs=1e-6)

    def test_prose_variant_negatives_from_predictions(self):
        rng = np.random.default_rng(7)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.2, negatives_from="predictions")
        fast = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg).item()
        slow = brute_force_stream_loss(pred, targets, positions, negs.indices, 0.2,
                                       neg_source=pred)
        assert fast == pytest.approx(slow, abs=1e-6)


class TestInterChannel:
    def test_identical_channels_scale_linearly(self):
        rng = np.random.default_rng(8)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.15)
        single = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg).item()
        for C in (2, 6):
            channels = [ad.Tensor(targets.copy()) for _ in range(C)]
            total, terms = obj.loss_c2(ad.Tensor(pred), channels, [True] * C,
                                       positions, negs, cfg)
            assert total.item() == pytest.approx(C * single, abs=1e-5)
            assert len(terms) == C

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.15)
        channels = [ad.Tensor(targets.copy()) for _ in range(4)]
        a, _ = obj.loss_c2(ad.Tensor(pred), channels, [True] * 4, positions, negs, cfg)
        b, _ = obj.loss_c2(ad.Tensor(pred), channels[::-1], [True] * 4, positions, negs, cfg)
        assert abs(a.item() - b.item()) < 1e-6

    def test_two_channel_brute_force(self):
        rng = np.random.default_rng(10)
        pred = rng.normal(size=(7, 4))
        z1, z2 = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
        positions = (0, 3, 5)
        negs = [obj.sample_negatives(positions, 2, seed=1),
                obj.sample_negatives(positions, 2, seed=2)]
        cfg = obj.LossConfig(temperature=0.4, n_negatives=2)
        total, _ = obj.loss_c2(ad.Tensor(pred), [ad.Tensor(z1), ad.Tensor(z2)],
                               [True, True], positions, negs, cfg)
        slow = (brute_force_stream_loss(pred, z1, positions, negs[0].indices, 0.4)
                + brute_force_stream_loss(pred, z2, positions, negs[1].indices, 0.4))
        assert total.item() == pytest.approx(slow, abs=1e-6)

    def test_dropped_channels_contribute_nothing(self):
        rng = np.random.default_rng(11)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.15)
        other = ad.Tensor(rng.normal(size=targets.shape), requires_grad=True)
        keep = ad.Tensor(targets, requires_grad=True)
        total, terms = obj.loss_c2(ad.Tensor(pred), [keep, other], [True, False],
                                   positions, negs, cfg)
        single = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg)
        assert total.item() == pytest.approx(single.item(), abs=1e-7)
        assert terms[1] is None
        grads = ad.backward(total, wrt=[other])
        np.testing.assert_array_equal(grads[other], np.zeros(other.shape))

    def test_no_active_channels_rejected(self):
        with pytest.raises(ValueError):
            obj.loss_c2(ad.Tensor(np.ones((4, 2))), [ad.Tensor(np.ones((4, 2)))],
                        [False], (0, 1), obj.sample_negatives((0, 1), 1, 0),
                        obj.LossConfig())


class TestTotalLoss:
    def test_lambda_zero_ignores_sa(self):
        cfg = obj.LossConfig(single_audio_weight=0.0)
        parts = {"l_c1": ad.Tensor(np.float64(0.5)), "l_c2": ad.Tensor(np.float64(1.5)),
                 "l_sa": ad.Tensor(np.float64(9.0))}
        assert obj.total_loss(parts, cfg, "av").item() == pytest.approx(2.0)

    def test_weighted_arithmetic(self):
        cfg = obj.LossConfig(single_audio_weight=1.0)
        parts = {"l_c1": ad.Tensor(np.float64(0.5)), "l_c2": ad.Tensor(np.float64(1.5)),
                 "l_sa": ad.Tensor(np.float64(2.0))}
        assert obj.total_loss(parts, cfg, "av").item() == pytest.approx(4.0)

    def test_audio_only_batch(self):
        cfg = obj.LossConfig(single_audio_weight=0.7)
        parts = {"l_sa": ad.Tensor(np.float64(2.0))}
        assert obj.total_loss(parts, cfg, "audio").item() == pytest.approx(1.4)

    def test_missing_part_rejected(self):
        with pytest.raises(ValueError):
            obj.total_loss({"l_c1": ad.Tensor(np.float64(1.0))}, obj.LossConfig(), "av")
        with pytest.raises(ValueError):
            obj.total_loss({}, obj.LossConfig(), "audio")

    def test_mixed_batch_decomposes(self):
        rng = np.random.default_rng(12)
        cfg = obj.LossConfig(temperature=0.2, single_audio_weight=0.8)
        pred, targets, positions, negs = random_case(rng)
        pred_sa, targets_sa, positions_sa, negs_sa = random_case(rng, T=9)
        l1 = obj.loss_c1(ad.Tensor(pred), ad.Tensor(targets), positions, negs, cfg)
        l2, _ = obj.loss_c2(ad.Tensor(pred), [ad.Tensor(targets)], [True], positions, negs, cfg)
        lsa = obj.loss_sa(ad.Tensor(pred_sa), ad.Tensor(targets_sa), positions_sa, negs_sa, cfg)
        mixed = obj.total_loss({"l_c1": l1, "l_c2": l2, "l_sa": lsa}, cfg, "av").item()
        av_only = obj.total_loss({"l_c1": l1, "l_c2": l2}, cfg, "av").item()
        audio_only = obj.total_loss({"l_sa": lsa}, cfg, "audio").item()
        assert mixed == pytest.approx(av_only + audio_only, abs=1e-6)


class TestLossGradients:
    def test_c1_gradients_match_fd(self):
        rng = np.random.default_rng(13)
        _, _, positions, negs = random_case(rng, T=6, d=4, n_masked=3, k=2)
        cfg = obj.LossConfig(temperature=0.3, n_negatives=2)

        def build(ts):
            return obj.loss_c1(ts[0], ts[1], positions, negs, cfg)

        check_gradients(build, [rng.normal(size=(6, 4)), rng.normal(size=(6, 4))])

    def test_c2_gradients_match_fd(self):
        rng = np.random.default_rng(14)
        positions = (0, 2, 4)
        negs = obj.sample_negatives(positions, 2, seed=3)
        cfg = obj.LossConfig(temperature=0.3, n_negatives=2)

        def build(ts):
            total, _ = obj.loss_c2(ts[0], [ts[1], ts[2]], [True, True], positions, negs, cfg)
            return total

        check_gradients(build, [rng.normal(size=(5, 4)), rng.normal(size=(5, 4)),
                                rng.normal(size=(5, 4))])

    def test_stop_target_grad_flag(self):
        rng = np.random.default_rng(15)
        pred, targets, positions, negs = random_case(rng)
        cfg = obj.LossConfig(temperature=0.2, stop_target_grad=True)
        p = ad.Tensor(pred, requires_grad=True)
        t = ad.Tensor(targets, requires_grad=True)
        grads = ad.backward(obj.loss_c1(p, t, positions, negs, cfg), wrt=[p, t])
        np.testing.assert_array_equal(grads[t], np.zeros(t.shape))
        assert np.any(grads[p] != 0)
