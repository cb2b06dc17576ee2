"""Sampling strategies over black-box prediction records.

Every strategy consumes :class:`PredictionRecord` objects (the predictor
exchange unit: predicted tags, optional per-token log-probabilities,
optional ensemble passes) and produces a sentence batch.  Uncertainty-based
scores are oriented so that the most uncertain sentence has the largest
score and every strategy is argmax-select.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Dataset, Sentence
from .partition import AlignmentError, GroupErrorRecord, Partition
from .selection import Batch

__all__ = [
    "PredictionRecord",
    "UncertaintySnapshot",
    "CapabilityError",
    "AlternationChoice",
    "score_us",
    "score_bald",
    "score_random",
    "score_uncertainty_decay",
    "alternation_policy",
    "fass_select",
    "prediction_difference_rates",
    "prediction_difference_records",
    "write_records",
    "read_records",
]


class CapabilityError(RuntimeError):
    """The predictor does not expose the output a strategy needs."""


@dataclass(frozen=True)
class PredictionRecord:
    sentence_id: int
    labels: tuple[str, ...]
    logprobs: tuple[dict[str, float], ...] | None = None
    ensemble: tuple[tuple[str, ...], ...] | None = None

    def validate(self) -> None:
        if self.logprobs is not None:
            if len(self.logprobs) != len(self.labels):
                raise ValueError(f"sentence {self.sentence_id}: logprobs length mismatch")
            for i, lp in enumerate(self.logprobs):
                total = sum(math.exp(v) for v in lp.values())
                if abs(total - 1.0) > 1e-6:
                    raise ValueError(
                        f"sentence {self.sentence_id} token {i}: probabilities sum to {total}"
                    )
                best = max(lp.values())
                if lp.get(self.labels[i], -math.inf) < best - 1e-9:
                    raise ValueError(
                        f"sentence {self.sentence_id} token {i}: label {self.labels[i]!r} "
                        f"is not an argmax tag"
                    )
        if self.ensemble is not None:
            if len(self.ensemble) < 2:
                raise ValueError(f"sentence {self.sentence_id}: ensemble needs >= 2 passes")
            for pass_tags in self.ensemble:
                if len(pass_tags) != len(self.labels):
                    raise ValueError(
                        f"sentence {self.sentence_id}: ensemble pass length mismatch"
                    )


def write_records(records: Iterable[PredictionRecord], fh: IO[str]) -> None:
    """Line-delimited JSON exchange format, one record per sentence."""
    for r in records:
        payload: dict = {"sentence_id": r.sentence_id, "labels": list(r.labels)}
        if r.logprobs is not None:
            payload["logprobs"] = [dict(sorted(lp.items())) for lp in r.logprobs]
        if r.ensemble is not None:
            payload["ensemble"] = [list(p) for p in r.ensemble]
        fh.write(json.dumps(payload, sort_keys=True) + "\n")


def read_records(fh: IO[str] | str, validate: bool = True) -> dict[int, PredictionRecord]:
    lines = fh.splitlines() if isinstance(fh, str) else fh
    out: dict[int, PredictionRecord] = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        payload = json.loads(line)
        rec = PredictionRecord(
            sentence_id=int(payload["sentence_id"]),
            labels=tuple(payload["labels"]),
            logprobs=tuple(dict(lp) for lp in payload["logprobs"])
            if "logprobs" in payload
            else None,
            ensemble=tuple(tuple(p) for p in payload["ensemble"])
            if "ensemble" in payload
            else None,
        )
        if validate:
            rec.validate()
        out[rec.sentence_id] = rec
    return out


# -- uncertainty scores -----------------------------------------------------


def score_us(record: PredictionRecord) -> float:
    """Least-confidence score: negated length-normalized sum of the best
    per-token log-probabilities (0 = fully confident, larger = less sure)."""
    if record.logprobs is None:
        raise CapabilityError("black-box predictor provides no probabilities")
    total = sum(max(lp.values()) for lp in record.logprobs)
    return -total / len(record.labels)


def score_bald(record: PredictionRecord) -> float:
    """Mean per-token disagreement with the ensemble mode (ties broken by
    the lexicographically smallest tag)."""
    if record.ensemble is None:
        raise CapabilityError("black-box predictor provides no ensemble passes")
    K = len(record.ensemble)
    total = 0.0
    for l in range(len(record.labels)):
        counts: dict[str, int] = {}
        for pass_tags in record.ensemble:
            counts[pass_tags[l]] = counts.get(pass_tags[l], 0) + 1
        top = max(counts.values())
        mode = min(t for t, n in counts.items() if n == top)
        total += (K - counts[mode]) / K
    return total / len(record.labels)


def score_random(sentence_ids: Sequence[int], seed: int) -> dict[int, float]:
    """Seeded uniform scores; argmax-selection then draws uniformly."""
    rng = np.random.default_rng(seed)
    draws = rng.random(len(sentence_ids))
    return {sid: float(u) for sid, u in zip(sentence_ids, draws)}


@dataclass
class UncertaintySnapshot:
    checkpoint_tokens: int
    scores: dict[int, float]


def score_uncertainty_decay(
    current: UncertaintySnapshot, lagged: UncertaintySnapshot
) -> dict[int, float]:
    """Predicted future uncertainty drop: min(max(u_prev - u_now, 0), u_now).

    Sentences without a lagged value fall back to their raw uncertainty.
    """
    out: dict[int, float] = {}
    for sid, u_now in current.scores.items():
        u_prev = lagged.scores.get(sid)
        if u_prev is None:
            out[sid] = u_now
        else:
            out[sid] = min(max(u_prev - u_now, 0.0), u_now)
    return out


class AlternationChoice(enum.Enum):
    DECAY_SCORE = "DECAY_SCORE"
    RAW_UNCERTAINTY = "RAW_UNCERTAINTY"


def alternation_policy(batch_index: int) -> AlternationChoice:
    """Avoid starvation: odd selection batches use the decayed score, even
    batches fall back to the raw uncertainty."""
    return (
        AlternationChoice.DECAY_SCORE
        if batch_index % 2 == 1
        else AlternationChoice.RAW_UNCERTAINTY
    )


# -- filtered submodular selection (uncertainty filter + diversity) --------


def fass_select(
    pool_scores: Mapping[int, float] | None,
    embeddings: Mapping[int, np.ndarray],
    lengths: Mapping[int, int],
    token_budget: int,
    t_factor: int = 100,
    rng: np.random.Generator | None = None,
    mode: str = "SENTENCE",
    doc_ids: Mapping[int, int] | None = None,
) -> Batch:
    """Filter the most uncertain sentences, then greedily cover them.

    The filter keeps the top ``t_factor`` x (expected batch sentence count)
    sentences by uncertainty; with ``pool_scores=None`` (pure
    diversification) it keeps a seeded uniform random candidate set of the
    same size.  Selection greedily maximizes a facility-location coverage
    function over shifted cosine similarities (cos + 1, keeping the
    objective monotone submodular), with per-step gains normalized by
    sentence length, until the token budget is met.
    """
    if t_factor < 1:
        raise ValueError("t_factor must be >= 1")
    ids = sorted(embeddings)
    if not ids:
        raise ValueError("empty candidate pool")
    n = len(ids)
    mean_len = sum(lengths[i] for i in ids) / n
    expected = max(1, math.ceil(token_budget / max(mean_len, 1.0)))
    keep = min(n, t_factor * expected)

    if pool_scores is None:
        if rng is None:
            raise ValueError("pure diversification needs a seeded rng for the filter")
        chosen = rng.choice(n, size=keep, replace=False)
        cand_ids = sorted(ids[i] for i in chosen)
    else:
        order = sorted(ids, key=lambda i: (-pool_scores[i], i))
        cand_ids = sorted(order[:keep])

    X = np.stack([np.asarray(embeddings[i], dtype=np.float32) for i in cand_ids])
    norms = np.linalg.norm(X, axis=1)
    norms[norms == 0] = 1.0
    Xn = X / norms[:, None]
    sim = Xn @ Xn.T + np.float32(1.0)  # shifted cosine in [0, 2]
    lens = np.asarray([lengths[i] for i in cand_ids], dtype=np.float64)

    if mode == "DOCUMENT":
        if doc_ids is None:
            raise ValueError("DOCUMENT mode needs doc_ids")
        docs = np.asarray([doc_ids[i] for i in cand_ids])

    cover = np.zeros(len(cand_ids), dtype=np.float32)
    active = np.ones(len(cand_ids), dtype=bool)
    picked: list[int] = []
    tokens = 0

    def row_gain(row: int) -> float:
        return float(
            np.maximum(sim[row] - cover, 0.0).sum(dtype=np.float64) / lens[row]
        )

    if mode == "SENTENCE":
        # lazy greedy: stale heap bounds only overestimate (submodularity),
        # so popping until the top bound falls below the best fresh gain
        # reproduces the exact argmax, including smallest-id tie-breaking
        import heapq

        init = np.maximum(sim, 0.0).sum(axis=1, dtype=np.float64) / lens
        heap = [(-g, row) for row, g in enumerate(init)]
        heapq.heapify(heap)
        fresh = np.zeros(len(cand_ids), dtype=bool)
        while tokens < token_budget:
            if not heap:
                return Batch(tuple(picked), tokens, exhausted=True)
            fresh[:] = False
            best_row = -1
            best_gain = -np.inf
            while heap:
                neg_bound, row = heap[0]
                bound = -neg_bound
                if bound < best_gain or (bound == best_gain and row > best_row):
                    break
                heapq.heappop(heap)
                if not active[row]:
                    continue
                if fresh[row]:
                    gain = bound
                else:
                    gain = row_gain(row)
                    fresh[row] = True
                    if gain < bound:
                        heapq.heappush(heap, (-gain, row))
                        continue
                if gain > best_gain or (gain == best_gain and row < best_row):
                    if best_row >= 0:
                        heapq.heappush(heap, (-best_gain, best_row))
                    best_gain, best_row = gain, row
                else:
                    heapq.heappush(heap, (-gain, row))
            if best_row < 0:
                return Batch(tuple(picked), tokens, exhausted=True)
            active[best_row] = False
            cover = np.maximum(cover, sim[best_row])
            picked.append(cand_ids[best_row])
            tokens += int(lens[best_row])
        return Batch(tuple(picked), tokens)

    while tokens < token_budget:
        if not active.any():
            return Batch(tuple(picked), tokens, exhausted=True)
        gains = np.asarray([row_gain(r) if active[r] else -np.inf
                            for r in range(len(cand_ids))])
        best_doc = None
        best_score = -np.inf
        for d in np.unique(docs[active]):
            sel = active & (docs == d)
            w = lens[sel]
            ds = float((gains[sel] * w).sum() / w.sum())
            if ds > best_score:
                best_doc, best_score = d, ds
        chosen_rows = list(np.flatnonzero(active & (docs == best_doc)))
        for row in chosen_rows:
            active[row] = False
            cover = np.maximum(cover, sim[row])
            picked.append(cand_ids[row])
            tokens += int(lens[row])
    return Batch(tuple(picked), tokens)


# -- prediction-difference decay (no validation labels) ---------------------


def prediction_difference_rates(
    current: Mapping[int, Sequence[str]],
    past: Mapping[int, Sequence[str]],
    partition: Partition,
    reference: Dataset | Sequence[Sentence],
    table=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-group mass-weighted fraction of reference tokens where a past
    model disagrees with the current one.  Uses predictions only; gold
    labels never enter."""
    sentences = reference.sentences if isinstance(reference, Dataset) else reference
    diff = np.zeros(partition.n_groups, dtype=np.float64)
    mass = np.zeros(partition.n_groups, dtype=np.float64)
    for s in sentences:
        if s.id not in current or s.id not in past:
            raise AlignmentError(f"missing predictions for reference sentence {s.id}")
        cur = current[s.id]
        old = past[s.id]
        if len(cur) != len(s) or len(old) != len(s):
            raise AlignmentError(f"reference sentence {s.id}: prediction length mismatch")
        losses = np.asarray([c != o for c, o in zip(cur, old)], dtype=np.float64)
        if partition.soft:
            memb = partition.sentence_membership(s, table)
            diff += memb * losses.sum()
            mass += memb * len(s)
        else:
            gids = partition.token_group_ids(s, table)
            np.add.at(diff, gids, losses)
            mass += np.bincount(gids, minlength=partition.n_groups)
    zero = mass == 0
    rates = np.zeros_like(diff)
    np.divide(diff, mass, out=rates, where=~zero)
    return rates, mass


def prediction_difference_records(
    reference: Dataset | Sequence[Sentence],
    prediction_history: Sequence[Mapping[int, Sequence[str]]],
    train_mass_history: Sequence[np.ndarray],
    partition: Partition,
    table=None,
) -> list[GroupErrorRecord]:
    """Decay-fit records where the error signal is the disagreement of each
    past checkpoint's predictions with the current model's predictions."""
    if len(prediction_history) != len(train_mass_history):
        raise ValueError("prediction and mass histories differ in length")
    if len(prediction_history) < 2:
        raise ValueError("need at least 2 checkpoints of predictions")
    current = prediction_history[-1]
    records = []
    for t in range(len(prediction_history) - 1):
        rates, mass = prediction_difference_rates(
            current, prediction_history[t], partition, reference, table
        )
        records.append(
            GroupErrorRecord(
                checkpoint_index=t,
                train_mass=np.asarray(train_mass_history[t], dtype=np.float64),
                val_error=rates,
                val_mass=mass,
            )
        )
    return records
