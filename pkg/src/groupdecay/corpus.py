"""Tokenized corpora: CoNLL ingestion, embedding tables, and word features."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Union

import numpy as np

__all__ = [
    "Token",
    "Sentence",
    "Dataset",
    "EmbeddingTable",
    "ShapeClass",
    "CorpusFormatError",
    "parse_conll",
    "serialize_conll",
    "load_embeddings",
    "sentence_embedding",
    "shape_class",
    "concat_sentences",
    "entity_type",
]

_BIO_RE = re.compile(r"^(O|[BI]-.+)$")
_DOCSTART = "-DOCSTART-"


class CorpusFormatError(ValueError):
    """Malformed corpus or embedding text; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


def entity_type(tag: str) -> str:
    """Entity type of a BIO tag; the outside tag maps to 'O'."""
    return "O" if tag == "O" else tag.split("-", 1)[1]


@dataclass(frozen=True)
class Token:
    surface: str
    gold_label: str | None = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.gold_label is not None and not _BIO_RE.match(self.gold_label):
            raise ValueError(f"not a BIO tag: {self.gold_label!r}")


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[Token, ...]
    doc_id: int | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("sentence must contain at least one token")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)

    @property
    def labels(self) -> tuple[str | None, ...]:
        return tuple(t.gold_label for t in self.tokens)


@dataclass(frozen=True)
class Dataset:
    sentences: tuple[Sentence, ...]
    label_inventory: frozenset[str]
    role: str = "pool"
    bio_warnings: int = 0

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)

    @property
    def has_labels(self) -> bool:
        """True when every token carries a gold tag."""
        return all(
            t.gold_label is not None for s in self.sentences for t in s.tokens
        )

    def with_role(self, role: str) -> "Dataset":
        return Dataset(self.sentences, self.label_inventory, role, self.bio_warnings)


def _iter_lines(source: Union[str, IO]) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, decoded line) from str, text, or byte streams."""
    if isinstance(source, str):
        lines: Iterable = source.splitlines()
    else:
        lines = source
    for number, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(f"not valid UTF-8: {exc}", number) from exc
        yield number, raw.rstrip("\n").rstrip("\r")


def parse_conll(source: Union[str, IO], role: str = "pool") -> Dataset:
    """Parse whitespace-column CoNLL text into a Dataset.

    The first column is the surface form and the last column the BIO tag;
    single-column lines yield unlabeled tokens (pool files).  Blank lines end
    sentences and ``-DOCSTART-`` lines open a new document.  An I-X tag with
    no preceding B-X/I-X is kept verbatim but counted in ``bio_warnings``.
    """
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    inventory: set[str] = set()
    warnings = 0
    doc_counter = -1
    sent_id = 0

    def flush():
        nonlocal tokens, sent_id
        if tokens:
            doc = doc_counter if doc_counter >= 0 else None
            sentences.append(Sentence(id=sent_id, tokens=tuple(tokens), doc_id=doc))
            sent_id += 1
            tokens = []

    for number, line in _iter_lines(source):
        stripped = line.strip()
        if not stripped:
            flush()
            continue
        cols = stripped.split()
        if cols[0].startswith(_DOCSTART):
            flush()
            doc_counter += 1
            continue
        surface = cols[0]
        tag = cols[-1] if len(cols) >= 2 else None
        if tag is not None:
            if not _BIO_RE.match(tag):
                raise CorpusFormatError(f"not a BIO tag: {tag!r}", number)
            if tag != "O":
                inventory.add(entity_type(tag))
                if tag.startswith("I-"):
                    prev = tokens[-1].gold_label if tokens else None
                    inside = entity_type(tag)
                    if prev is None or prev == "O" or entity_type(prev) != inside:
                        warnings += 1
        tokens.append(Token(surface=surface, gold_label=tag))
    flush()

    return Dataset(
        sentences=tuple(sentences),
        label_inventory=frozenset(inventory),
        role=role,
        bio_warnings=warnings,
    )


def serialize_conll(dataset: Dataset) -> str:
    """Render a Dataset back to CoNLL text (surface [tag] columns).

    Emits a ``-DOCSTART-`` line before each document group so that
    ``parse_conll`` reconstructs identical document ids.
    """
    out: list[str] = []
    current_doc = -1
    for sentence in dataset.sentences:
        if sentence.doc_id is not None:
            while current_doc < sentence.doc_id:
                current_doc += 1
                out.append(_DOCSTART)
                out.append("")
        for token in sentence.tokens:
            if token.gold_label is None:
                out.append(token.surface)
            else:
                out.append(f"{token.surface} {token.gold_label}")
        out.append("")
    return "\n".join(out)


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    oov_vector: np.ndarray
    normalized: bool = False
    duplicate_warnings: int = 0

    def get(self, surface: str) -> np.ndarray:
        return self.vectors.get(surface, self.oov_vector)

    def __contains__(self, surface: str) -> bool:
        return surface in self.vectors


def load_embeddings(source: Union[str, IO], normalize: bool = True) -> EmbeddingTable:
    """Load a ``surface v1 ... vd`` text table.

    With ``normalize`` every vector is scaled to unit Euclidean norm, which
    makes the squared distance between two entries twice their cosine
    distance.  Zero vectors are replaced by the out-of-vocabulary vector,
    itself the (normalized) mean of all stored vectors.  Duplicate surfaces
    keep the last entry and bump ``duplicate_warnings``.
    """
    raw: dict[str, np.ndarray] = {}
    dim: int | None = None
    duplicates = 0
    for number, line in _iter_lines(source):
        if not line.strip():
            continue
        cols = line.split()
        if dim is None:
            if len(cols) < 2:
                raise CorpusFormatError("expected 'surface v1 ... vd'", number)
            dim = len(cols) - 1
        elif len(cols) - 1 != dim:
            raise CorpusFormatError(
                f"dimension {len(cols) - 1} != {dim} of first entry", number
            )
        try:
            vec = np.asarray([float(v) for v in cols[1:]], dtype=np.float64)
        except ValueError as exc:
            raise CorpusFormatError(f"non-numeric component: {exc}", number) from exc
        if cols[0] in raw:
            duplicates += 1
        raw[cols[0]] = vec
    if dim is None:
        raise CorpusFormatError("empty embedding file", None)

    zero_keys = []
    for key, vec in raw.items():
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            zero_keys.append(key)
        elif normalize:
            raw[key] = vec / norm

    kept = [v for k, v in raw.items() if k not in set(zero_keys)]
    if kept:
        oov = np.mean(kept, axis=0)
        if normalize:
            norm = float(np.linalg.norm(oov))
            if norm > 0:
                oov = oov / norm
    else:
        oov = np.zeros(dim, dtype=np.float64)
    for key in zero_keys:
        raw[key] = oov.copy()

    return EmbeddingTable(
        dim=dim,
        vectors=raw,
        oov_vector=oov,
        normalized=normalize,
        duplicate_warnings=duplicates,
    )


def sentence_embedding(sentence: Sentence, table: EmbeddingTable) -> np.ndarray:
    """Unweighted mean of the token vectors; the mean is not re-normalized."""
    acc = np.zeros(table.dim, dtype=np.float64)
    for token in sentence.tokens:
        acc += table.get(token.surface)
    return acc / len(sentence)


class ShapeClass(enum.IntEnum):
    ALL_UPPER = 0
    ALL_LOWER = 1
    INIT_CAP = 2
    OTHER = 3


def shape_class(token: Union[Token, str]) -> ShapeClass:
    """Classify a surface into one of four case-shape classes."""
    surface = token.surface if isinstance(token, Token) else token
    alpha = [c for c in surface if c.isalpha()]
    if alpha and all(c.isupper() for c in alpha):
        return ShapeClass.ALL_UPPER
    if alpha and all(c.islower() for c in alpha):
        return ShapeClass.ALL_LOWER
    first = surface[0] if surface else ""
    if first.isalpha() and first.isupper() and all(c.islower() for c in alpha[1:]):
        return ShapeClass.INIT_CAP
    return ShapeClass.OTHER


def concat_sentences(datasets: Iterable[Dataset]) -> list[Sentence]:
    """Flatten several datasets into one sentence list (ids left untouched)."""
    out: list[Sentence] = []
    for ds in datasets:
        out.extend(ds.sentences)
    return out
