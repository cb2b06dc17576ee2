import numpy as np
import pytest

from groupdecay.corpus import Sentence, Token, load_embeddings
from groupdecay.partition import (
    AlignmentError,
    ParameterError,
    PartitionConfig,
    PartitionKind,
    build_identity_partition,
    build_partition,
    group_error,
    group_mass,
    load_partition,
    minibatch_kmeans,
    save_partition,
    sentence_group_delta,
)


def _sent(i, *pairs, doc=None):
    return Sentence(
        id=i,
        tokens=tuple(Token(surface=s, gold_label=t) for s, t in pairs),
        doc_id=doc,
    )


def _table(words, dim, rng):
    lines = "\n".join(
        f"{w} " + " ".join(repr(float(v)) for v in rng.normal(size=dim)) for w in words
    )
    return load_embeddings(lines, normalize=True)


class TestMinibatchKmeans:
    def test_k_equals_n_puts_every_point_alone(self):
        X = np.eye(12)
        centers, assign = minibatch_kmeans(X, 12, batch_size=64, iterations=20, seed=0)
        assert sorted(assign) == list(range(12))
        cost = sum(np.sum((X[i] - centers[assign[i]]) ** 2) for i in range(12))
        assert cost < 1e-12

    def test_two_separated_pairs(self):
        # brute-force oracle: the minimal-cost 2-partition is {0,1} | {2,3}
        X = np.array([[0.0, 0.0], [0.2, 0.0], [10.0, 0.0], [10.2, 0.0]])
        centers, assign = minibatch_kmeans(X, 2, batch_size=8, iterations=50, seed=1)
        assert assign[0] == assign[1] and assign[2] == assign[3]
        assert assign[0] != assign[2]
        got = {tuple(np.round(c, 6)) for c in centers}
        assert got == {(0.1, 0.0), (10.1, 0.0)}

    def test_k1_center_is_full_mean(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 5))
        centers, _ = minibatch_kmeans(X, 1, batch_size=100, iterations=30, seed=2)
        np.testing.assert_allclose(centers[0], X.mean(axis=0), atol=1e-6)

    def test_too_few_vectors_is_parameter_error(self):
        with pytest.raises(ParameterError):
            minibatch_kmeans(np.eye(3), 4)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(60, 4))
        c1, a1 = minibatch_kmeans(X, 5, seed=9)
        c2, a2 = minibatch_kmeans(X, 5, seed=9)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(a1, a2)

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 3))
        _, assign = minibatch_kmeans(X, 8, batch_size=4, iterations=5, seed=0)
        assert len(set(assign.tolist())) == 8


@pytest.fixture(scope="module")
def small_corpus():
    rng = np.random.default_rng(11)
    words = [f"word{i}" for i in range(30)] + ["Paris", "NATO", "mRNA", "x1"]
    table = _table(words, 6, rng)
    gen = np.random.default_rng(12)
    sentences = []
    for i in range(40):
        n = int(gen.integers(2, 7))
        chosen = [words[int(gen.integers(len(words)))] for _ in range(n)]
        sentences.append(_sent(i, *[(w, "O") for w in chosen]))
    return sentences, table


class TestBuildPartition:
    def test_word_shape_single_parent_at_most_four_groups(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(word_groups=1, seed=0, kmeans_iters=10)
        part = build_partition(sentences, table, PartitionKind.WORD_SHAPE, cfg)
        assert part.n_groups == 4
        masses = group_mass(part, sentences, table)
        assert (masses > 0).sum() <= 4

    def test_sentence_membership_sums_to_one(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(sentence_groups=5, seed=0, kmeans_iters=10)
        part = build_partition(sentences, table, PartitionKind.SENTENCE, cfg)
        for s in sentences[:10]:
            memb = part.sentence_membership(s, table)
            assert abs(memb.sum() - 1.0) < 1e-9
            assert (memb >= 0).all()

    def test_softmax_membership_value(self):
        # engineered centers with cosines 0.9 and 0.8 to the sentence
        # embedding, temperature 0.1 -> softmax of (9, 8)
        from groupdecay.corpus import load_embeddings
        from groupdecay.partition import Partition

        table = load_embeddings("only 1 0\n", normalize=True)
        part = Partition(
            PartitionKind.SENTENCE,
            temperature=0.1,
            sentence_centers=np.array(
                [[0.9, np.sqrt(1 - 0.81)], [0.8, 0.6]]
            ),
        )
        s = _sent(0, ("only", "O"))
        memb = part.sentence_membership(s, table)
        np.testing.assert_allclose(memb, [0.7310585786, 0.2689414214], atol=1e-9)

    def test_equidistant_centers_uniform_membership(self):
        from groupdecay.corpus import load_embeddings
        from groupdecay.partition import Partition

        table = load_embeddings("only 1 0 0\n", normalize=True)
        centers = np.array(
            [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.5, -0.5, 0.0], [0.5, 0.0, -0.5]]
        )
        part = Partition(PartitionKind.SENTENCE, temperature=0.1, sentence_centers=centers)
        memb = part.sentence_membership(_sent(0, ("only", "O")), table)
        np.testing.assert_allclose(memb, 0.25, atol=1e-12)

    def test_word_partition_group_count_and_determinism(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(word_groups=3, word_subgroups=4, seed=0, kmeans_iters=10)
        p1 = build_partition(sentences, table, PartitionKind.WORD, cfg)
        p2 = build_partition(sentences, table, PartitionKind.WORD, cfg)
        assert p1.n_groups == 12
        assert save_partition(p1) == save_partition(p2)

    def test_word_sentence_partition_assigns_by_sentence_group(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(
            word_groups=3, sentence_groups=4, seed=1, kmeans_iters=10
        )
        part = build_partition(sentences, table, PartitionKind.WORD_SENTENCE, cfg)
        assert part.n_groups == 12
        s = sentences[0]
        sg = int(np.argmax(part.sentence_group_scores(s, table)))
        gids = part.token_group_ids(s, table)
        assert all(g % 4 == sg for g in gids)

    def test_identity_partition(self):
        sents = [_sent(0, ("a", "O"), ("b", "O")), _sent(1, ("b", "O"), ("c", "O"))]
        part = build_identity_partition(sents)
        assert part.n_groups == 3
        gids = part.token_group_ids(sents[0], None)
        assert gids.tolist() == [0, 1]
        with pytest.raises(ParameterError):
            part.token_group_ids(_sent(2, ("zzz", "O")), None)

    def test_membership_one_hot_for_hard(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(word_groups=2, word_subgroups=2, seed=0, kmeans_iters=5)
        part = build_partition(sentences, table, PartitionKind.WORD, cfg)
        vec = part.membership((sentences[0], 0), table)
        assert vec.sum() == 1.0
        assert set(np.unique(vec)) <= {0.0, 1.0}

    def test_serialization_round_trip_membership(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(word_groups=3, word_subgroups=2, seed=5, kmeans_iters=10)
        part = build_partition(sentences, table, PartitionKind.WORD, cfg)
        text = save_partition(part)
        clone = load_partition(text)
        for s in sentences[:10]:
            np.testing.assert_array_equal(
                part.token_group_ids(s, table), clone.token_group_ids(s, table)
            )
        assert save_partition(clone) == text


class TestGroupMass:
    def test_empty_dataset_zero(self):
        part = build_identity_partition([_sent(0, ("a", "O")), _sent(1, ("b", "O"))])
        np.testing.assert_array_equal(group_mass(part, []), [0.0, 0.0])

    def test_soft_mass_is_membership_times_length(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(sentence_groups=4, seed=0, kmeans_iters=10)
        part = build_partition(sentences, table, PartitionKind.SENTENCE, cfg)
        s = sentences[3]
        memb = part.sentence_membership(s, table)
        np.testing.assert_allclose(group_mass(part, [s], table), memb * len(s))

    def test_mass_additivity(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(sentence_groups=4, seed=0, kmeans_iters=10)
        for kind in (PartitionKind.SENTENCE, PartitionKind.WORD_SHAPE):
            cfgk = PartitionConfig(
                sentence_groups=4, word_groups=3, seed=0, kmeans_iters=10
            )
            part = build_partition(sentences, table, kind, cfgk)
            m1 = group_mass(part, sentences[:15], table)
            m2 = group_mass(part, sentences[15:], table)
            m = group_mass(part, sentences, table)
            np.testing.assert_allclose(m1 + m2, m, atol=1e-9)

    def test_total_mass_equals_token_count(self, small_corpus):
        sentences, table = small_corpus
        tokens = sum(len(s) for s in sentences)
        for kind in PartitionKind:
            cfg = PartitionConfig(
                sentence_groups=4, word_groups=3, word_subgroups=2,
                seed=0, kmeans_iters=10,
            )
            part = build_partition(sentences, table, kind, cfg)
            total = group_mass(part, sentences, table).sum()
            assert abs(total - tokens) < 1e-6 * tokens

    def test_sentence_group_delta_matches_mass(self, small_corpus):
        sentences, table = small_corpus
        cfg = PartitionConfig(sentence_groups=4, seed=0, kmeans_iters=10)
        part = build_partition(sentences, table, PartitionKind.SENTENCE, cfg)
        gids, vals = sentence_group_delta(part, sentences[0], table)
        full = np.zeros(part.n_groups)
        full[gids] = vals
        np.testing.assert_allclose(full, group_mass(part, [sentences[0]], table))


class TestGroupError:
    def _identity_setup(self):
        gold = [
            _sent(0, ("a", "O"), ("a", "B-PER"), ("b", "O")),
            _sent(1, ("b", "B-LOC"), ("a", "O")),
        ]
        part = build_identity_partition(gold)
        from groupdecay.corpus import Dataset

        ds = Dataset(tuple(gold), frozenset({"PER", "LOC"}), role="validation")
        return part, ds

    def test_perfect_predictions_zero(self):
        part, ds = self._identity_setup()
        preds = {s.id: [t.gold_label for t in s.tokens] for s in ds.sentences}
        ge = group_error(part, preds, ds)
        np.testing.assert_array_equal(ge.error, 0.0)

    def test_counting(self):
        # single-group partition over 10 tokens with 3 mismatches -> 0.3
        gold = [_sent(0, *[(f"x", "O")] * 10)]
        from groupdecay.corpus import Dataset

        ds = Dataset(tuple(gold), frozenset({"PER"}), role="validation")
        part = build_identity_partition(gold + [_sent(1, ("y", "O"))])
        preds = {0: ["O"] * 7 + ["B-PER"] * 3}
        ge = group_error(part, preds, ds)
        x_gid = part.token_group_ids(gold[0], None)[0]
        assert ge.error[x_gid] == pytest.approx(0.3)

    def test_weighted_loss_value(self):
        gold = [_sent(0, ("a", "B-PER"))]
        from groupdecay.corpus import Dataset

        ds = Dataset(tuple(gold), frozenset({"PER", "LOC"}), role="validation")
        part = build_identity_partition(gold + [_sent(1, ("b", "O"))])
        weights = {"PER": 0.9, "LOC": 0.1, "O": 0.5}
        ge = group_error(part, {0: ["B-LOC"]}, ds, class_weights=weights)
        gid = part.token_group_ids(gold[0], None)[0]
        assert ge.error[gid] == pytest.approx(0.5)

    def test_uniform_weights_match_unweighted(self):
        part, ds = self._identity_setup()
        preds = {0: ["B-PER", "O", "O"], 1: ["B-LOC", "B-LOC"]}
        plain = group_error(part, preds, ds)
        ones = group_error(
            part, preds, ds, class_weights={"PER": 1.0, "LOC": 1.0, "O": 1.0}
        )
        np.testing.assert_array_equal(plain.error, ones.error)

    def test_zero_mass_group_flagged(self):
        part, ds = self._identity_setup()
        bigger = build_identity_partition(
            list(ds.sentences) + [_sent(9, ("unseen", "O"))]
        )
        preds = {s.id: [t.gold_label for t in s.tokens] for s in ds.sentences}
        ge = group_error(bigger, preds, ds)
        unseen_gid = bigger.token_group_ids(_sent(9, ("unseen", "O")), None)[0]
        assert ge.zero_mass[unseen_gid]
        assert ge.error[unseen_gid] == 0.0

    def test_alignment_error_names_sentence(self):
        part, ds = self._identity_setup()
        with pytest.raises(AlignmentError, match="sentence 1"):
            group_error(part, {0: ["O", "O", "O"], 1: ["O"]}, ds)

    def test_errors_within_unit_interval(self):
        part, ds = self._identity_setup()
        preds = {0: ["B-PER", "B-PER", "B-PER"], 1: ["B-PER", "B-PER"]}
        ge = group_error(part, preds, ds)
        assert ((ge.error >= 0) & (ge.error <= 1)).all()
