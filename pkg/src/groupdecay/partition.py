"""Feature-defined partitions of words and sentences, group masses and errors.

A partition assigns every word token (or sentence) of a corpus to one of J
groups.  Word-unit partitions are hard; the sentence partition is soft, with
membership probabilities from a temperature softmax over cosine similarity
to cluster centers.  Group masses count expected tokens per group, and group
errors average per-token tag mismatches against gold labels.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    Dataset,
    EmbeddingTable,
    Sentence,
    ShapeClass,
    entity_type,
    sentence_embedding,
    shape_class,
)

__all__ = [
    "PartitionKind",
    "PartitionConfig",
    "Group",
    "Partition",
    "GroupErrors",
    "GroupErrorRecord",
    "ParameterError",
    "AlignmentError",
    "minibatch_kmeans",
    "build_partition",
    "build_identity_partition",
    "group_mass",
    "sentence_group_delta",
    "group_error",
    "save_partition",
    "load_partition",
]

N_SHAPES = 4


class ParameterError(ValueError):
    """Invalid clustering or partition parameters."""


class AlignmentError(ValueError):
    """Predictions do not align with the gold dataset."""


class PartitionKind(str, enum.Enum):
    SENTENCE = "SENTENCE"
    WORD = "WORD"
    WORD_SHAPE = "WORD_SHAPE"
    WORD_SENTENCE = "WORD_SENTENCE"


@dataclass
class PartitionConfig:
    sentence_groups: int = 10
    word_groups: int = 10
    word_subgroups: int = 10
    temperature: float = 0.1
    kmeans_batch: int = 1024
    kmeans_iters: int = 100
    seed: int = 0


@dataclass
class Group:
    id: int
    descriptor: dict
    exemplar_surfaces: tuple[str, ...] = ()


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; duplicates of chosen points get zero weight."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def minibatch_kmeans(
    vectors: np.ndarray,
    k: int,
    batch_size: int = 1024,
    iterations: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch k-means with k-means++ seeding.

    Deterministic given (vectors, seed).  Per-center learning rates decay as
    1/count, so with ``batch_size >= len(vectors)`` and k = 1 the center is
    exactly the running mean.  After the final assignment, empty clusters are
    re-seeded to the point farthest from its assigned center.

    Returns (centers (k, d), hard assignments (n,)).
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("vectors must be a 2-D array")
    n = X.shape[0]
    if k < 1:
        raise ParameterError("k must be >= 1")
    if n < k:
        raise ParameterError(f"need at least k={k} vectors, got {n}")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(X, k, rng)
    counts = np.zeros(k, dtype=np.float64)

    m = min(batch_size, n)
    for _ in range(iterations):
        batch_idx = rng.choice(n, size=m, replace=False)
        B = X[batch_idx]
        d2 = ((B[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        # sequential 1/count running-mean updates collapse to a closed form:
        # new center = (old_count * old + sum(batch members)) / (old_count + m_c)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, B)
        batch_counts = np.bincount(assign, minlength=k).astype(np.float64)
        nonzero = batch_counts > 0
        new_counts = counts + batch_counts
        centers[nonzero] = (
            centers[nonzero] * counts[nonzero, None] + sums[nonzero]
        ) / new_counts[nonzero, None]
        counts = new_counts

    for _ in range(k):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        sizes = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            break
        dist_to_own = d2[np.arange(n), assign]
        farthest = int(np.argmax(dist_to_own))
        centers[empty[0]] = X[farthest]
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    return centers, assign


def _cosine_to_centers(vec: np.ndarray, centers: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(centers, axis=1) * np.linalg.norm(vec)
    out = np.zeros(centers.shape[0], dtype=np.float64)
    ok = norms > 0
    out[ok] = (centers[ok] @ vec) / norms[ok]
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class Partition:
    """A frozen clustering of words or sentences into J groups.

    Construction happens once per run via :func:`build_partition` (or
    :func:`build_identity_partition`); membership and mass queries are
    read-only afterwards and safe to issue concurrently.
    """

    def __init__(
        self,
        kind: PartitionKind,
        *,
        temperature: float = 0.1,
        seed: int = 0,
        sentence_centers: np.ndarray | None = None,
        word_centers: np.ndarray | None = None,
        sub_centers: list[np.ndarray] | None = None,
        identity_vocab: list[str] | None = None,
        sub_slots: int = 0,
        groups: list[Group] | None = None,
    ):
        self.kind = PartitionKind(kind)
        self.unit = "sentence" if self.kind == PartitionKind.SENTENCE else "word"
        self.soft = self.kind == PartitionKind.SENTENCE
        self.temperature = float(temperature)
        self.seed = int(seed)
        self.sentence_centers = sentence_centers
        self.word_centers = word_centers
        self.sub_centers = sub_centers
        self.identity_vocab = identity_vocab
        self._identity_index = (
            {w: i for i, w in enumerate(identity_vocab)} if identity_vocab else None
        )
        self.sub_slots = int(sub_slots)
        self.groups = groups or []
        self._word_cluster_cache: dict[str, int] = {}
        self._word_group_cache: dict[str, int] = {}

    @property
    def n_groups(self) -> int:
        if self._identity_index is not None:
            return len(self._identity_index)
        if self.kind == PartitionKind.SENTENCE:
            return self.sentence_centers.shape[0]
        k1 = self.word_centers.shape[0]
        if self.kind == PartitionKind.WORD:
            return k1 * self.sub_slots
        if self.kind == PartitionKind.WORD_SHAPE:
            return k1 * N_SHAPES
        return k1 * self.sentence_centers.shape[0]

    # -- membership ------------------------------------------------------

    def _word_cluster(self, surface: str, table: EmbeddingTable) -> int:
        hit = self._word_cluster_cache.get(surface)
        if hit is not None:
            return hit
        vec = table.get(surface)
        c = int(np.argmin(np.sum((self.word_centers - vec) ** 2, axis=1)))
        self._word_cluster_cache[surface] = c
        return c

    def sentence_group_scores(self, sentence: Sentence, table: EmbeddingTable) -> np.ndarray:
        emb = sentence_embedding(sentence, table)
        return _cosine_to_centers(emb, self.sentence_centers)

    def sentence_membership(self, sentence: Sentence, table: EmbeddingTable) -> np.ndarray:
        """Soft membership over sentence groups (sums to 1)."""
        if self.kind != PartitionKind.SENTENCE:
            raise ParameterError("sentence_membership requires the sentence partition")
        return _softmax(self.sentence_group_scores(sentence, table) / self.temperature)

    def token_group_ids(self, sentence: Sentence, table: EmbeddingTable | None) -> np.ndarray:
        """Hard group id of every token in the sentence (word-unit kinds)."""
        if self.kind == PartitionKind.SENTENCE:
            raise ParameterError("token_group_ids requires a word-unit partition")
        if self._identity_index is not None:
            try:
                return np.asarray(
                    [self._identity_index[t.surface] for t in sentence.tokens],
                    dtype=np.intp,
                )
            except KeyError as exc:
                raise ParameterError(
                    f"surface {exc.args[0]!r} outside the identity partition vocabulary"
                ) from exc
        if self.kind == PartitionKind.WORD:
            out = np.empty(len(sentence), dtype=np.intp)
            for i, tok in enumerate(sentence.tokens):
                gid = self._word_group_cache.get(tok.surface)
                if gid is None:
                    top = self._word_cluster(tok.surface, table)
                    subs = self.sub_centers[top]
                    vec = table.get(tok.surface)
                    sub = int(np.argmin(np.sum((subs - vec) ** 2, axis=1)))
                    gid = top * self.sub_slots + sub
                    self._word_group_cache[tok.surface] = gid
                out[i] = gid
            return out
        if self.kind == PartitionKind.WORD_SHAPE:
            out = np.empty(len(sentence), dtype=np.intp)
            for i, tok in enumerate(sentence.tokens):
                gid = self._word_group_cache.get(tok.surface)
                if gid is None:
                    top = self._word_cluster(tok.surface, table)
                    gid = top * N_SHAPES + int(shape_class(tok.surface))
                    self._word_group_cache[tok.surface] = gid
                out[i] = gid
            return out
        # WORD_SENTENCE: second level is the sentence's most likely group
        sent_group = int(np.argmax(self.sentence_group_scores(sentence, table)))
        js = self.sentence_centers.shape[0]
        out = np.empty(len(sentence), dtype=np.intp)
        for i, tok in enumerate(sentence.tokens):
            top = self._word_cluster(tok.surface, table)
            out[i] = top * js + sent_group
        return out

    def membership(self, unit, table: EmbeddingTable | None = None) -> np.ndarray:
        """Probability vector over groups for one unit.

        For the soft sentence partition the unit is a Sentence; for hard
        word-unit partitions the unit is a (sentence, token_index) pair and
        the result is one-hot.
        """
        if self.kind == PartitionKind.SENTENCE:
            return self.sentence_membership(unit, table)
        sentence, index = unit
        gids = self.token_group_ids(sentence, table)
        vec = np.zeros(self.n_groups, dtype=np.float64)
        vec[gids[index]] = 1.0
        return vec


def _unique_word_vectors(
    sentences: Sequence[Sentence], table: EmbeddingTable
) -> tuple[list[str], np.ndarray]:
    vocab = sorted({t.surface for s in sentences for t in s.tokens})
    X = np.stack([table.get(w) for w in vocab])
    return vocab, X


def _nearest_exemplars(
    center: np.ndarray, names: Sequence[str], X: np.ndarray, limit: int = 10
) -> tuple[str, ...]:
    if len(names) == 0:
        return ()
    d2 = np.sum((X - center) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")[:limit]
    return tuple(names[i] for i in order)


def build_identity_partition(sentences: Sequence[Sentence]) -> Partition:
    """One group per distinct surface (word unit, hard, no clustering)."""
    vocab = sorted({t.surface for s in sentences for t in s.tokens})
    if len(vocab) < 2:
        raise ParameterError("identity partition needs at least 2 distinct surfaces")
    part = Partition(PartitionKind.WORD, identity_vocab=vocab)
    part.groups = [
        Group(id=i, descriptor={"surface": w}, exemplar_surfaces=(w,))
        for i, w in enumerate(vocab)
    ]
    return part


def build_partition(
    sentences: Sequence[Sentence] | Dataset,
    table: EmbeddingTable,
    kind: PartitionKind | str,
    config: PartitionConfig | None = None,
) -> Partition:
    """Cluster the corpus union into a frozen partition of the given kind.

    ``sentences`` must cover training data, sampling pool, and validation so
    that group statistics approximate the test distribution.
    """
    if isinstance(sentences, Dataset):
        sentences = list(sentences.sentences)
    kind = PartitionKind(kind)
    cfg = config or PartitionConfig()

    sentence_centers = None
    word_centers = None
    sub_centers = None
    groups: list[Group] = []

    needs_sentence = kind in (PartitionKind.SENTENCE, PartitionKind.WORD_SENTENCE)
    needs_word = kind != PartitionKind.SENTENCE

    if needs_sentence:
        S = np.stack([sentence_embedding(s, table) for s in sentences])
        if np.unique(S, axis=0).shape[0] < cfg.sentence_groups:
            raise ParameterError(
                f"fewer distinct sentence embeddings than {cfg.sentence_groups} clusters"
            )
        sentence_centers, _ = minibatch_kmeans(
            S, cfg.sentence_groups, cfg.kmeans_batch, cfg.kmeans_iters, seed=cfg.seed * 7 + 1
        )

    if needs_word:
        vocab, X = _unique_word_vectors(sentences, table)
        if np.unique(X, axis=0).shape[0] < cfg.word_groups:
            raise ParameterError(
                f"fewer distinct word vectors than {cfg.word_groups} clusters"
            )
        word_centers, assign = minibatch_kmeans(
            X, cfg.word_groups, cfg.kmeans_batch, cfg.kmeans_iters, seed=cfg.seed * 7 + 2
        )

    if kind == PartitionKind.SENTENCE:
        part = Partition(
            kind, temperature=cfg.temperature, seed=cfg.seed, sentence_centers=sentence_centers
        )
        sent_names = [" ".join(s.surfaces[:8]) for s in sentences]
        for j in range(cfg.sentence_groups):
            groups.append(
                Group(
                    id=j,
                    descriptor={"sentence_cluster": j},
                    exemplar_surfaces=_nearest_exemplars(sentence_centers[j], sent_names, S),
                )
            )
        part.groups = groups
        return part

    if kind == PartitionKind.WORD:
        sub_centers = []
        for top in range(cfg.word_groups):
            members = np.flatnonzero(assign == top)
            Xm = X[members]
            k2 = min(cfg.word_subgroups, max(1, np.unique(Xm, axis=0).shape[0]))
            centers2, _ = minibatch_kmeans(
                Xm, k2, cfg.kmeans_batch, cfg.kmeans_iters, seed=cfg.seed * 7 + 100 + top
            )
            sub_centers.append(centers2)
        part = Partition(
            kind,
            seed=cfg.seed,
            word_centers=word_centers,
            sub_centers=sub_centers,
            sub_slots=cfg.word_subgroups,
        )
    elif kind == PartitionKind.WORD_SHAPE:
        part = Partition(kind, seed=cfg.seed, word_centers=word_centers)
    else:  # WORD_SENTENCE
        part = Partition(
            kind,
            temperature=cfg.temperature,
            seed=cfg.seed,
            word_centers=word_centers,
            sentence_centers=sentence_centers,
        )

    # exemplars from the word vocabulary, grouped by final assignment
    for j in range(part.n_groups):
        groups.append(Group(id=j, descriptor={}, exemplar_surfaces=()))
    if kind == PartitionKind.WORD:
        for top in range(cfg.word_groups):
            members = np.flatnonzero(assign == top)
            if members.size == 0:
                continue
            Xm = X[members]
            subs = part.sub_centers[top]
            sub_assign = np.argmin(
                ((Xm[:, None, :] - subs[None, :, :]) ** 2).sum(axis=2), axis=1
            )
            for sub in range(subs.shape[0]):
                gid = top * cfg.word_subgroups + sub
                sel = members[sub_assign == sub]
                groups[gid].descriptor = {"word_cluster": top, "word_subcluster": sub}
                groups[gid].exemplar_surfaces = _nearest_exemplars(
                    subs[sub], [vocab[i] for i in sel], X[sel]
                )
    elif kind == PartitionKind.WORD_SHAPE:
        shapes = np.asarray([int(shape_class(w)) for w in vocab])
        for top in range(cfg.word_groups):
            for sh in range(N_SHAPES):
                gid = top * N_SHAPES + sh
                sel = np.flatnonzero((assign == top) & (shapes == sh))
                groups[gid].descriptor = {
                    "word_cluster": top,
                    "shape": ShapeClass(sh).name,
                }
                groups[gid].exemplar_surfaces = _nearest_exemplars(
                    word_centers[top], [vocab[i] for i in sel], X[sel]
                )
    else:
        js = cfg.sentence_groups
        for top in range(cfg.word_groups):
            sel = np.flatnonzero(assign == top)
            ex = _nearest_exemplars(word_centers[top], [vocab[i] for i in sel], X[sel])
            for sg in range(js):
                gid = top * js + sg
                groups[gid].descriptor = {"word_cluster": top, "sentence_cluster": sg}
                groups[gid].exemplar_surfaces = ex
    part.groups = groups
    return part


# -- masses and errors ----------------------------------------------------


def group_mass(
    partition: Partition,
    data: Dataset | Iterable[Sentence],
    table: EmbeddingTable | None = None,
) -> np.ndarray:
    """Expected token count per group over a dataset (or any sentence batch)."""
    sentences = data.sentences if isinstance(data, Dataset) else data
    masses = np.zeros(partition.n_groups, dtype=np.float64)
    if partition.soft:
        for s in sentences:
            masses += partition.sentence_membership(s, table) * len(s)
    else:
        for s in sentences:
            gids = partition.token_group_ids(s, table)
            masses += np.bincount(gids, minlength=partition.n_groups)
    return masses


def sentence_group_delta(
    partition: Partition, sentence: Sentence, table: EmbeddingTable | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse (group ids, mass increments) contributed by one sentence."""
    if partition.soft:
        memb = partition.sentence_membership(sentence, table)
        return np.arange(partition.n_groups, dtype=np.intp), memb * len(sentence)
    gids = partition.token_group_ids(sentence, table)
    uniq, counts = np.unique(gids, return_counts=True)
    return uniq, counts.astype(np.float64)


@dataclass
class GroupErrors:
    error: np.ndarray      # average per-token error in [0, 1] per group
    mass: np.ndarray       # m(group, dataset)
    zero_mass: np.ndarray  # True where mass == 0 (error reported as 0)


@dataclass
class GroupErrorRecord:
    """One retraining checkpoint: training masses and validation errors."""

    checkpoint_index: int
    train_mass: np.ndarray
    val_error: np.ndarray
    val_mass: np.ndarray


def _token_losses(
    gold: Sequence[str], pred: Sequence[str], class_weights: Mapping[str, float] | None
) -> np.ndarray:
    mism = np.asarray([g != p for g, p in zip(gold, pred)], dtype=np.float64)
    if class_weights is None:
        return mism
    w = np.asarray(
        [
            0.5 * (class_weights[entity_type(g)] + class_weights[entity_type(p)])
            for g, p in zip(gold, pred)
        ]
    )
    return mism * w


def group_error(
    partition: Partition,
    predictions: Mapping[int, Sequence[str]],
    gold: Dataset,
    table: EmbeddingTable | None = None,
    class_weights: Mapping[str, float] | None = None,
) -> GroupErrors:
    """Average per-token error per group, weighted by group membership.

    ``predictions`` maps sentence id to a predicted tag sequence covering
    every gold sentence.  With ``class_weights`` the token loss becomes the
    mean of the gold and predicted class weights on mismatches.  Groups with
    zero mass report error 0 and are flagged.
    """
    err = np.zeros(partition.n_groups, dtype=np.float64)
    mass = np.zeros(partition.n_groups, dtype=np.float64)
    for s in gold.sentences:
        if s.id not in predictions:
            raise AlignmentError(f"no prediction for sentence {s.id}")
        pred = predictions[s.id]
        if len(pred) != len(s):
            raise AlignmentError(
                f"sentence {s.id}: prediction length {len(pred)} != {len(s)} tokens"
            )
        losses = _token_losses([t.gold_label for t in s.tokens], pred, class_weights)
        if partition.soft:
            memb = partition.sentence_membership(s, table)
            err += memb * losses.sum()
            mass += memb * len(s)
        else:
            gids = partition.token_group_ids(s, table)
            np.add.at(err, gids, losses)
            mass += np.bincount(gids, minlength=partition.n_groups)
    zero = mass == 0
    avg = np.zeros_like(err)
    np.divide(err, mass, out=avg, where=~zero)
    return GroupErrors(error=avg, mass=mass, zero_mass=zero)


# -- serialization ---------------------------------------------------------

_FORMAT = "groupdecay-partition/1"


def save_partition(partition: Partition) -> str:
    """Serialize to versioned JSON sufficient to recompute membership."""
    def arr(a):
        return None if a is None else np.asarray(a).tolist()

    payload = {
        "format": _FORMAT,
        "kind": partition.kind.value,
        "temperature": partition.temperature,
        "seed": partition.seed,
        "sub_slots": partition.sub_slots,
        "sentence_centers": arr(partition.sentence_centers),
        "word_centers": arr(partition.word_centers),
        "sub_centers": None
        if partition.sub_centers is None
        else [arr(c) for c in partition.sub_centers],
        "identity_vocab": partition.identity_vocab,
        "groups": [
            {
                "id": g.id,
                "descriptor": g.descriptor,
                "exemplars": list(g.exemplar_surfaces),
            }
            for g in partition.groups
        ],
    }
    return json.dumps(payload, sort_keys=True)


def load_partition(text: str) -> Partition:
    payload = json.loads(text)
    if payload.get("format") != _FORMAT:
        raise ParameterError(f"unsupported partition format: {payload.get('format')!r}")

    def arr(key):
        v = payload.get(key)
        return None if v is None else np.asarray(v, dtype=np.float64)

    subs = payload.get("sub_centers")
    part = Partition(
        PartitionKind(payload["kind"]),
        temperature=payload["temperature"],
        seed=payload["seed"],
        sentence_centers=arr("sentence_centers"),
        word_centers=arr("word_centers"),
        sub_centers=None if subs is None else [np.asarray(c, dtype=np.float64) for c in subs],
        identity_vocab=payload.get("identity_vocab"),
        sub_slots=payload.get("sub_slots", 0),
    )
    part.groups = [
        Group(id=g["id"], descriptor=g["descriptor"], exemplar_surfaces=tuple(g["exemplars"]))
        for g in payload["groups"]
    ]
    return part
