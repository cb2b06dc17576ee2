"""Greedy batch selection that maximizes predicted error reduction.

A fitted decay curve per partition turns group masses into predicted
errors; the batch objective is the negative mass-weighted predicted error
over the corpus union.  Sentences are scored by the geometric mean (over
partitions) of their length-normalized marginal gain, and batches are built
greedily until the token budget is met.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EmbeddingTable, Sentence
from .decay import DecayFit, DecayParams, _basis
from .partition import Partition, group_mass, sentence_group_delta

__all__ = [
    "Batch",
    "SelectionState",
    "default_epsilon",
    "objective",
    "edg_score",
    "select_batch",
]

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-12


def default_epsilon(da_tokens: int) -> float:
    """Smoothing constant scaled with corpus size (0.001 at ~250k tokens)."""
    return 0.001 * max(1.0, da_tokens / 250_000.0)


@dataclass
class Batch:
    sentence_ids: tuple[int, ...]
    token_count: int
    exhausted: bool = False  # pool ran out before the budget was met


@dataclass
class SelectionState:
    """Mutable selection-time view: fitted curves plus mass bookkeeping.

    ``train_mass`` tracks group masses over the training data plus the batch
    built so far and is updated incrementally; ``da_mass`` is frozen at run
    start and approximates the test-time group distribution.
    """

    partitions: list[Partition]
    fits: list[DecayFit]
    train_mass: list[np.ndarray]
    da_mass: list[np.ndarray]
    token_budget: int
    epsilon: float
    table: EmbeddingTable | None = None
    selected: list[int] = field(default_factory=list)
    numeric_faults: int = 0

    @classmethod
    def create(
        cls,
        partitions: Sequence[Partition],
        fits: Sequence[DecayFit],
        train_sentences: Sequence[Sentence],
        da_sentences: Sequence[Sentence],
        token_budget: int,
        epsilon: float | None = None,
        table: EmbeddingTable | None = None,
    ) -> "SelectionState":
        train_mass = [group_mass(p, train_sentences, table) for p in partitions]
        da_mass = [group_mass(p, da_sentences, table) for p in partitions]
        if epsilon is None:
            epsilon = default_epsilon(sum(len(s) for s in da_sentences))
        return cls(
            partitions=list(partitions),
            fits=list(fits),
            train_mass=train_mass,
            da_mass=da_mass,
            token_budget=token_budget,
            epsilon=epsilon,
            table=table,
        )

    def add_sentence(self, sentence: Sentence) -> None:
        for idx, p in enumerate(self.partitions):
            gids, vals = sentence_group_delta(p, sentence, self.table)
            self.train_mass[idx][gids] += vals
        self.selected.append(sentence.id)


def _curve_full(params: DecayParams, masses: np.ndarray) -> np.ndarray:
    a = np.array([params.a0, params.a_half, params.a1, params.a2, params.a3])
    return params.c + params.b * _basis(a, masses)


def _curve_at(params: DecayParams, gids: np.ndarray, masses: np.ndarray) -> np.ndarray:
    a = np.array([params.a0, params.a_half, params.a1, params.a2, params.a3])
    return params.c[gids] + params.b[gids] * _basis(a, masses)


def objective(state: SelectionState, partition_index: int) -> float:
    """Negative predicted error mass over the corpus union for one partition."""
    params = state.fits[partition_index].params
    e = _curve_full(params, state.train_mass[partition_index])
    return float(-(e * state.da_mass[partition_index]).sum())


def _sentence_gain(state: SelectionState, partition_index: int, sentence: Sentence) -> float:
    params = state.fits[partition_index].params
    masses = state.train_mass[partition_index]
    da = state.da_mass[partition_index]
    gids, vals = sentence_group_delta(state.partitions[partition_index], sentence, state.table)
    before = _curve_at(params, gids, masses[gids])
    after = _curve_at(params, gids, masses[gids] + vals)
    return float(((before - after) * da[gids]).sum())


def edg_score(state: SelectionState, sentence: Sentence) -> float:
    """Geometric mean over partitions of the length-normalized gain + epsilon."""
    factors = []
    for idx in range(len(state.partitions)):
        f = _sentence_gain(state, idx, sentence) / len(sentence) + state.epsilon
        if f <= 0.0:
            state.numeric_faults += 1
            log.warning("non-positive selection factor %g clamped", f)
            f = SCORE_FLOOR
        factors.append(f)
    prod = float(np.prod(factors))
    return prod ** (1.0 / len(factors))


class _PoolScorer:
    """Vectorized per-step scoring of all remaining pool sentences."""

    def __init__(self, state: SelectionState, pool: Sequence[Sentence]):
        self.state = state
        self.pool = sorted(pool, key=lambda s: s.id)
        self.lengths = np.asarray([len(s) for s in self.pool], dtype=np.float64)
        self.active = np.ones(len(self.pool), dtype=bool)
        self.hard: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
        self.soft: list[np.ndarray | None] = []
        for p in state.partitions:
            if p.soft:
                P = np.stack([p.sentence_membership(s, state.table) for s in self.pool])
                self.soft.append(P)
                self.hard.append(None)
            else:
                indptr = [0]
                gids: list[np.ndarray] = []
                vals: list[np.ndarray] = []
                for s in self.pool:
                    g, v = sentence_group_delta(p, s, state.table)
                    gids.append(g)
                    vals.append(v)
                    indptr.append(indptr[-1] + len(g))
                self.soft.append(None)
                self.hard.append(
                    (
                        np.asarray(indptr, dtype=np.intp),
                        np.concatenate(gids) if gids else np.empty(0, dtype=np.intp),
                        np.concatenate(vals) if vals else np.empty(0),
                    )
                )

    def gains(self, partition_index: int) -> np.ndarray:
        state = self.state
        params = state.fits[partition_index].params
        m = state.train_mass[partition_index]
        da = state.da_mass[partition_index]
        if self.soft[partition_index] is not None:
            P = self.soft[partition_index]
            delta = P * self.lengths[:, None]
            before = _curve_full(params, m)[None, :]
            after_masses = m[None, :] + delta
            a = np.array([params.a0, params.a_half, params.a1, params.a2, params.a3])
            after = params.c[None, :] + params.b[None, :] * _basis(a, after_masses)
            return ((before - after) * da[None, :]).sum(axis=1)
        indptr, gids, vals = self.hard[partition_index]
        before = _curve_at(params, gids, m[gids])
        after = _curve_at(params, gids, m[gids] + vals)
        contrib = (before - after) * da[gids]
        # segment sum per sentence
        out = np.zeros(len(self.pool), dtype=np.float64)
        nonempty = indptr[:-1] < indptr[1:]
        sums = np.add.reduceat(contrib, indptr[:-1][nonempty]) if contrib.size else []
        out[nonempty] = sums
        return out

    def scores(self) -> np.ndarray:
        state = self.state
        total = np.ones(len(self.pool), dtype=np.float64)
        for idx in range(len(state.partitions)):
            factor = self.gains(idx) / self.lengths + state.epsilon
            bad = factor <= 0.0
            if bad.any():
                state.numeric_faults += int(bad.sum())
                log.warning("%d non-positive selection factors clamped", int(bad.sum()))
                factor[bad] = SCORE_FLOOR
            total *= factor
        total = total ** (1.0 / len(state.partitions))
        total[~self.active] = -np.inf
        return total


def select_batch(
    state: SelectionState, pool: Sequence[Sentence], mode: str = "SENTENCE"
) -> Batch:
    """Greedy batch construction under the token budget.

    SENTENCE mode repeatedly takes the best-scoring sentence (earliest id on
    ties) and updates masses incrementally.  DOCUMENT mode scores a document
    by the length-weighted mean of its sentences' scores and takes whole
    documents.  Selection stops once the selected token count reaches the
    budget; the overshoot is bounded by the last added unit.
    """
    if mode not in ("SENTENCE", "DOCUMENT"):
        raise ValueError(f"unknown selection mode {mode!r}")
    picked: list[int] = []
    tokens = 0
    if state.token_budget <= 0:
        return Batch(sentence_ids=(), token_count=0)
    scorer = _PoolScorer(state, pool)

    if mode == "SENTENCE":
        while tokens < state.token_budget:
            if not scorer.active.any():
                return Batch(tuple(picked), tokens, exhausted=True)
            scores = scorer.scores()
            best = int(np.argmax(scores))
            sentence = scorer.pool[best]
            scorer.active[best] = False
            state.add_sentence(sentence)
            picked.append(sentence.id)
            tokens += len(sentence)
        return Batch(tuple(picked), tokens)

    # DOCUMENT mode
    doc_ids = []
    for s in scorer.pool:
        if s.doc_id is None:
            raise ValueError(f"sentence {s.id} has no document id (DOCUMENT mode)")
        doc_ids.append(s.doc_id)
    doc_ids = np.asarray(doc_ids)
    while tokens < state.token_budget:
        if not scorer.active.any():
            return Batch(tuple(picked), tokens, exhausted=True)
        scores = scorer.scores()
        active = scorer.active
        docs = np.unique(doc_ids[active])
        best_doc = None
        best_score = -np.inf
        for d in docs:
            sel = active & (doc_ids == d)
            w = scorer.lengths[sel]
            ds = float((scores[sel] * w).sum() / w.sum())
            if ds > best_score:
                best_doc, best_score = d, ds
        sel = np.flatnonzero(active & (doc_ids == best_doc))
        for i in sel:
            sentence = scorer.pool[int(i)]
            scorer.active[int(i)] = False
            state.add_sentence(sentence)
            picked.append(sentence.id)
            tokens += len(sentence)
    return Batch(tuple(picked), tokens)
