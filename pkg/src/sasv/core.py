"""Embeddings, trial protocols, and the scoring primitives shared by every stage.

File formats are plain UTF-8 text with LF line endings:
  embeddings:  ID<TAB>v1 v2 ... vD     (one vector per line, '#' comments allowed)
  protocols:   ENROLL_ID<TAB>TEST_ID<TAB>LABEL   with LABEL in {target, nontarget, spoof}
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class DataError(Exception):
    """Malformed or inconsistent input: bad file line, duplicate or missing id, empty protocol."""


class NumericError(Exception):
    """Numeric failure: zero-norm vectors, non-finite scores, losses or gradients."""


class TrialLabel(Enum):
    TARGET = "target"
    NONTARGET = "nontarget"
    SPOOF = "spoof"

    @property
    def z(self) -> int:
        # class index for the one-class loss: 0 = genuine target, 1 = everything else
        return 0 if self is TrialLabel.TARGET else 1

    @classmethod
    def parse(cls, text: str) -> "TrialLabel":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise DataError(
                f"unknown trial label {text!r} (expected target, nontarget or spoof)"
            ) from None

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    label: TrialLabel


@dataclass(frozen=True)
class ScoreRecord:
    """One scored trial: the SV cosine, the spoofing score, and their fusion."""

    trial: Trial
    s_sv: float
    s_spf: float
    s_sasv: float


@dataclass
class Protocol:
    trials: list[Trial]
    name: str = ""

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def counts(self) -> dict[TrialLabel, int]:
        out = {label: 0 for label in TrialLabel}
        for t in self.trials:
            out[t.label] += 1
        return out


@dataclass(frozen=True)
class Embedding:
    id: str
    values: np.ndarray


class EmbeddingStore:
    """In-memory id -> vector map for one subsystem ('sv' or 'cm').

    Vectors are float64 and flagged read-only once added; the store never
    mutates after loading.
    """

    def __init__(self, kind: str, dimension: int | None = None):
        if kind not in ("sv", "cm"):
            raise DataError(f"embedding store kind must be 'sv' or 'cm', got {kind!r}")
        self.kind = kind
        self.dimension = dimension
        self._entries: dict[str, np.ndarray] = {}

    def add(self, utt_id: str, values) -> None:
        if utt_id in self._entries:
            raise DataError(f"duplicate embedding id {utt_id!r} in {self.kind} store")
        vec = np.array(values, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise DataError(f"embedding {utt_id!r} must be a non-empty 1-D vector")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"embedding {utt_id!r} contains a non-finite value")
        if self.dimension is None:
            self.dimension = vec.size
        elif vec.size != self.dimension:
            raise DataError(
                f"embedding {utt_id!r} has dimension {vec.size}, "
                f"store expects {self.dimension}"
            )
        vec.setflags(write=False)
        self._entries[utt_id] = vec

    def vector(self, utt_id: str) -> np.ndarray:
        try:
            return self._entries[utt_id]
        except KeyError:
            raise DataError(f"id {utt_id!r} not found in {self.kind} embedding store") from None

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()


def length_normalize(values: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm. Zero-norm input is an error, not an epsilon."""
    vec = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not math.isfinite(norm):
        raise NumericError("cannot length-normalize a zero-norm or non-finite vector")
    return vec / norm


def cosine(a, b) -> float:
    """Cosine similarity with float64 accumulation, clamped to [-1, 1].

    Raises NumericError if either vector has zero norm.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine of a zero-norm vector is undefined")
    score = float(np.dot(av, bv) / (na * nb))
    return min(1.0, max(-1.0, score))


def _data_lines(path: str):
    # yields (lineno, stripped line) skipping comments and blank lines
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def load_embeddings(path: str, kind: str, normalize: bool = False) -> EmbeddingStore:
    """Parse an embedding file into a store.

    Each data line is ID<TAB>values where the values are space-separated
    decimal or scientific floats. Errors carry the offending line number.
    """
    store = EmbeddingStore(kind)
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(
                f"{path}:{lineno}: malformed embedding line, expected ID<TAB>values"
            )
        utt_id, payload = parts
        if not utt_id:
            raise DataError(f"{path}:{lineno}: empty embedding id")
        fields = payload.split()
        if not fields:
            raise DataError(f"{path}:{lineno}: embedding has no values")
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad float in embedding: {exc}") from None
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: non-finite embedding value")
        vec = np.asarray(values, dtype=np.float64)
        if normalize:
            vec = length_normalize(vec)
        try:
            store.add(utt_id, vec)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    if len(store) == 0:
        raise DataError(f"{path}: no embeddings found")
    return store


def save_embeddings(store: EmbeddingStore, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt_id, vec in store.items():
            fh.write(utt_id)
            fh.write("\t")
            fh.write(" ".join(repr(float(v)) for v in vec))
            fh.write("\n")


def load_protocol(path: str, name: str = "") -> Protocol:
    trials = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(
                f"{path}:{lineno}: malformed trial line, expected "
                "ENROLL_ID<TAB>TEST_ID<TAB>LABEL"
            )
        enroll_id, test_id, label_text = parts
        if not enroll_id or not test_id:
            raise DataError(f"{path}:{lineno}: empty trial id")
        try:
            label = TrialLabel.parse(label_text)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        trials.append(Trial(enroll_id, test_id, label))
    if not trials:
        raise DataError(f"{path}: empty protocol")
    return Protocol(trials, name=name or path)


def save_protocol(protocol: Protocol, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in protocol.trials:
            fh.write(f"{t.enroll_id}\t{t.test_id}\t{t.label}\n")


def check_protocol_ids(protocol: Protocol, sv_store: EmbeddingStore,
                       cm_store: EmbeddingStore | None) -> None:
    """Verify every trial resolves: enroll in the SV store, test in SV and CM stores."""
    for idx, t in enumerate(protocol.trials, start=1):
        if t.enroll_id not in sv_store:
            raise DataError(
                f"trial {idx}: enroll id {t.enroll_id!r} missing from sv store"
            )
        if t.test_id not in sv_store:
            raise DataError(f"trial {idx}: test id {t.test_id!r} missing from sv store")
        if cm_store is not None and t.test_id not in cm_store:
            raise DataError(f"trial {idx}: test id {t.test_id!r} missing from cm store")
