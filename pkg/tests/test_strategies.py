import io
import math

import numpy as np
import pytest

from groupdecay.corpus import Dataset, Sentence, Token
from groupdecay.partition import AlignmentError, build_identity_partition
from groupdecay.strategies import (
    AlternationChoice,
    CapabilityError,
    PredictionRecord,
    UncertaintySnapshot,
    alternation_policy,
    fass_select,
    prediction_difference_rates,
    prediction_difference_records,
    read_records,
    score_bald,
    score_random,
    score_uncertainty_decay,
    score_us,
    write_records,
)


def _lp(probs: dict[str, float]) -> dict[str, float]:
    return {t: math.log(p) for t, p in probs.items()}


class TestScoreUs:
    def test_fully_confident_is_zero(self):
        rec = PredictionRecord(0, ("O", "O"), logprobs=(_lp({"O": 1.0}), _lp({"O": 1.0})))
        assert score_us(rec) == pytest.approx(0.0)

    def test_half_probability_tokens(self):
        lp = _lp({"O": 0.5, "B-PER": 0.5})
        rec = PredictionRecord(0, ("B-PER", "B-PER"), logprobs=(lp, lp))
        assert score_us(rec) == pytest.approx(math.log(2))

    def test_duplication_invariance(self):
        lp1 = _lp({"O": 0.7, "B-PER": 0.3})
        lp2 = _lp({"O": 0.4, "B-PER": 0.6})
        rec = PredictionRecord(0, ("O", "B-PER"), logprobs=(lp1, lp2))
        rec2 = PredictionRecord(
            0, ("O", "B-PER", "O", "B-PER"), logprobs=(lp1, lp2, lp1, lp2)
        )
        assert score_us(rec) == pytest.approx(score_us(rec2))

    def test_missing_logprobs_raises(self):
        with pytest.raises(CapabilityError, match="no probabilities"):
            score_us(PredictionRecord(0, ("O",)))


class TestScoreBald:
    def test_full_agreement_zero(self):
        rec = PredictionRecord(0, ("O", "O"), ensemble=(("O", "O"),) * 5)
        assert score_bald(rec) == 0.0

    def test_six_four_split(self):
        passes = tuple(("O",) for _ in range(6)) + tuple(("B-PER",) for _ in range(4))
        rec = PredictionRecord(0, ("O",), ensemble=passes)
        assert score_bald(rec) == pytest.approx(0.4)

    def test_k2_total_disagreement_uses_smallest_mode(self):
        rec = PredictionRecord(
            0, ("O", "O"), ensemble=(("O", "B-PER"), ("B-PER", "O"))
        )
        assert score_bald(rec) == pytest.approx(0.5)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        tags = ["O", "B-PER", "I-PER"]
        for _ in range(100):
            K = int(rng.integers(2, 8))
            n = int(rng.integers(1, 6))
            ensemble = tuple(
                tuple(tags[int(rng.integers(3))] for _ in range(n)) for _ in range(K)
            )
            rec = PredictionRecord(0, ensemble[0], ensemble=ensemble)
            s = score_bald(rec)
            assert 0.0 <= s <= (K - 1) / K + 1e-12

    def test_missing_ensemble_raises(self):
        with pytest.raises(CapabilityError):
            score_bald(PredictionRecord(0, ("O",)))


class TestUncertaintyDecay:
    def test_decay_amount(self):
        cur = UncertaintySnapshot(2000, {0: 0.3})
        lag = UncertaintySnapshot(1000, {0: 0.5})
        assert score_uncertainty_decay(cur, lag)[0] == pytest.approx(0.2)

    def test_rising_uncertainty_clamped_to_zero(self):
        cur = UncertaintySnapshot(2000, {0: 0.5})
        lag = UncertaintySnapshot(1000, {0: 0.2})
        assert score_uncertainty_decay(cur, lag)[0] == 0.0

    def test_capped_by_current(self):
        cur = UncertaintySnapshot(2000, {0: 0.3})
        lag = UncertaintySnapshot(1000, {0: 0.9})
        assert score_uncertainty_decay(cur, lag)[0] == pytest.approx(0.3)

    def test_bounds_elementwise(self):
        rng = np.random.default_rng(1)
        cur = UncertaintySnapshot(2000, {i: float(u) for i, u in enumerate(rng.random(50))})
        lag = UncertaintySnapshot(1000, {i: float(u) for i, u in enumerate(rng.random(50))})
        out = score_uncertainty_decay(cur, lag)
        for i, v in out.items():
            assert 0.0 <= v <= cur.scores[i] + 1e-12

    def test_missing_lagged_id_falls_back_to_raw(self):
        cur = UncertaintySnapshot(2000, {0: 0.3, 1: 0.8})
        lag = UncertaintySnapshot(1000, {0: 0.5})
        out = score_uncertainty_decay(cur, lag)
        assert out[1] == pytest.approx(0.8)


class TestAlternation:
    @pytest.mark.parametrize(
        "batch,expected",
        [
            (1, AlternationChoice.DECAY_SCORE),
            (2, AlternationChoice.RAW_UNCERTAINTY),
            (3, AlternationChoice.DECAY_SCORE),
            (4, AlternationChoice.RAW_UNCERTAINTY),
        ],
    )
    def test_policy(self, batch, expected):
        assert alternation_policy(batch) is expected


class TestFassSelect:
    def test_identical_embeddings_first_pick_covers_all(self):
        emb = {i: np.array([1.0, 0.0]) for i in range(6)}
        lengths = {i: 2 for i in range(6)}
        batch = fass_select(None, emb, lengths, token_budget=4,
                            rng=np.random.default_rng(0), t_factor=100)
        # full coverage after the first pick; later gains are 0 and ties
        # resolve to the smallest remaining id
        assert batch.sentence_ids[0] == min(batch.sentence_ids)
        assert len(batch.sentence_ids) == 2

    def test_orthogonal_clusters_get_one_each(self):
        # exhaustive check over 2-subsets: the max facility-location value
        # picks one sentence from each orthogonal cluster
        emb = {
            0: np.array([1.0, 0.0]),
            1: np.array([1.0, 0.0]),
            2: np.array([0.0, 1.0]),
            3: np.array([0.0, 1.0]),
        }
        lengths = {i: 1 for i in emb}
        scores = {i: 1.0 for i in emb}

        def facility(sel):
            X = np.stack([emb[i] / np.linalg.norm(emb[i]) for i in emb])
            S = np.stack([emb[i] / np.linalg.norm(emb[i]) for i in sel])
            return (np.maximum((X @ S.T) + 1.0, 0).max(axis=1)).sum()

        from itertools import combinations

        best = max(combinations(emb, 2), key=facility)
        assert {0, 1} - set(best) and {2, 3} - set(best)  # one from each
        batch = fass_select(scores, emb, lengths, token_budget=2, t_factor=100)
        got = set(batch.sentence_ids)
        assert len(got & {0, 1}) == 1 and len(got & {2, 3}) == 1

    def test_uncertainty_filter_keeps_top(self):
        rng = np.random.default_rng(2)
        emb = {i: rng.normal(size=3) for i in range(50)}
        lengths = {i: 5 for i in range(50)}
        scores = {i: float(i) for i in range(50)}  # 49 most uncertain
        batch = fass_select(scores, emb, lengths, token_budget=5, t_factor=1)
        assert set(batch.sentence_ids) <= set(range(49, 48, -1)) | set(range(45, 50))

    def test_diversification_ignores_scores_with_seeded_filter(self):
        rng1 = np.random.default_rng(7)
        rng2 = np.random.default_rng(7)
        emb = {i: np.array([np.cos(i), np.sin(i)]) for i in range(30)}
        lengths = {i: 1 for i in range(30)}
        b1 = fass_select(None, emb, lengths, token_budget=3, t_factor=2, rng=rng1)
        b2 = fass_select(None, emb, lengths, token_budget=3, t_factor=2, rng=rng2)
        assert b1.sentence_ids == b2.sentence_ids

    def test_marginal_gains_non_increasing(self):
        rng = np.random.default_rng(3)
        emb = {i: rng.normal(size=4) for i in range(40)}
        lengths = {i: 1 for i in range(40)}
        scores = {i: float(rng.random()) for i in range(40)}
        # recompute the facility-location values of the greedy prefix
        batch = fass_select(scores, emb, lengths, token_budget=8, t_factor=100)
        X = np.stack([emb[i] / np.linalg.norm(emb[i]) for i in sorted(emb)])
        S = X @ X.T + 1.0
        idx = {sid: k for k, sid in enumerate(sorted(emb))}
        cover = np.zeros(40)
        gains = []
        for sid in batch.sentence_ids:
            new = np.maximum(S[idx[sid]], cover)
            gains.append(new.sum() - cover.sum())
            cover = new
        assert all(g1 >= g2 - 1e-9 for g1, g2 in zip(gains, gains[1:]))

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            fass_select({}, {}, {}, token_budget=1)


class TestScoreRandom:
    def test_same_seed_same_ordering(self):
        ids = list(range(100))
        assert score_random(ids, 5) == score_random(ids, 5)

    def test_argmax_frequency_uniform(self):
        # chi-square against uniform over 10 sentences, 10000 draws
        ids = list(range(10))
        counts = np.zeros(10)
        for seed in range(10_000):
            scores = score_random(ids, seed)
            counts[max(ids, key=lambda i: scores[i])] += 1
        expected = 1000.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 9 dof: mean 9, sd sqrt(18); 3 sigma above the mean
        assert chi2 < 9 + 3 * math.sqrt(18)

    def test_singleton(self):
        scores = score_random([42], 0)
        assert list(scores) == [42]


def _sent(i, words, labels=None):
    labels = labels or ["O"] * len(words)
    return Sentence(
        id=i, tokens=tuple(Token(surface=w, gold_label=l) for w, l in zip(words, labels))
    )


class TestPredictionDifference:
    def _setup(self):
        ref = Dataset(
            sentences=(_sent(0, ["a"] * 5), _sent(1, ["b"] * 5)),
            label_inventory=frozenset({"PER"}),
            role="validation",
        )
        part = build_identity_partition(list(ref.sentences))
        return ref, part

    def test_identical_predictions_zero_rates(self):
        ref, part = self._setup()
        cur = {0: ["O"] * 5, 1: ["B-PER"] * 5}
        rates, mass = prediction_difference_rates(cur, cur, part, ref)
        np.testing.assert_array_equal(rates, 0.0)
        assert mass.sum() == 10

    def test_counting_rate(self):
        ref, part = self._setup()
        ref10 = Dataset(
            sentences=(_sent(0, ["a"] * 10),),
            label_inventory=frozenset({"PER"}),
            role="validation",
        )
        part10 = build_identity_partition(list(ref10.sentences) + [_sent(9, ["b"])])
        cur = {0: ["O"] * 10}
        past = {0: ["B-PER"] * 3 + ["O"] * 7}
        rates, _ = prediction_difference_rates(cur, past, part10, ref10)
        gid = part10.token_group_ids(ref10.sentences[0], None)[0]
        assert rates[gid] == pytest.approx(0.3)

    def test_gold_relabeling_invariance(self):
        ref, part = self._setup()
        relabeled = Dataset(
            sentences=(
                _sent(0, ["a"] * 5, ["B-PER"] * 5),
                _sent(1, ["b"] * 5, ["B-PER"] * 5),
            ),
            label_inventory=frozenset({"PER"}),
            role="validation",
        )
        cur = {0: ["O"] * 5, 1: ["B-PER"] * 5}
        past = {0: ["B-PER"] * 5, 1: ["B-PER"] * 5}
        r1, _ = prediction_difference_rates(cur, past, part, ref)
        r2, _ = prediction_difference_rates(cur, past, part, relabeled)
        np.testing.assert_array_equal(r1, r2)

    def test_mismatched_reference_raises(self):
        ref, part = self._setup()
        with pytest.raises(AlignmentError):
            prediction_difference_rates({0: ["O"] * 5}, {0: ["O"] * 5}, part, ref)

    def test_records_compare_past_to_current(self):
        ref, part = self._setup()
        hist = [
            {0: ["B-PER"] * 5, 1: ["O"] * 5},
            {0: ["O"] * 5, 1: ["O"] * 5},
            {0: ["O"] * 5, 1: ["O"] * 5},
        ]
        masses = [np.array([5.0, 0.0]), np.array([7.0, 3.0]), np.array([9.0, 6.0])]
        records = prediction_difference_records(ref, hist, masses, part)
        assert len(records) == 2
        gid_a = part.token_group_ids(ref.sentences[0], None)[0]
        assert records[0].val_error[gid_a] == pytest.approx(1.0)
        assert records[1].val_error[gid_a] == pytest.approx(0.0)
        np.testing.assert_array_equal(records[0].train_mass, masses[0])


class TestRecordIO:
    def test_round_trip(self):
        rec = PredictionRecord(
            3,
            ("B-PER", "O"),
            logprobs=(_lp({"B-PER": 0.9, "O": 0.1}), _lp({"B-PER": 0.2, "O": 0.8})),
            ensemble=(("B-PER", "O"), ("O", "O")),
        )
        buf = io.StringIO()
        write_records([rec], buf)
        out = read_records(buf.getvalue())
        got = out[3]
        assert got.labels == rec.labels
        assert got.ensemble == rec.ensemble
        assert got.logprobs[0]["B-PER"] == pytest.approx(math.log(0.9))

    def test_validation_rejects_bad_probabilities(self):
        bad = PredictionRecord(0, ("O",), logprobs=({"O": math.log(0.5)},))
        with pytest.raises(ValueError, match="sum"):
            bad.validate()

    def test_validation_rejects_label_not_argmax(self):
        bad = PredictionRecord(
            0, ("O",), logprobs=(_lp({"O": 0.2, "B-PER": 0.8}),)
        )
        with pytest.raises(ValueError, match="argmax"):
            bad.validate()

    def test_validation_rejects_single_pass_ensemble(self):
        bad = PredictionRecord(0, ("O",), ensemble=(("O",),))
        with pytest.raises(ValueError, match=">= 2"):
            bad.validate()
