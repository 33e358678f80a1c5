"""Score-level fusion baselines: plain sum, CM-gated cascade, logistic regression.

All three consume the per-trial SV cosine plus a per-utterance countermeasure
score. The CM score source is either a plain ID<TAB>score file or a trained
integration model whose spoofing score depends only on the test utterance
(concat or cm_only input modes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .core import (DataError, EmbeddingStore, Protocol, ScoreRecord, TrialLabel,
                   cosine)
from .loss import sigmoid
from .metrics import eer
from .model import InputMode, IntegrationModel
from .training import AdamState, adam_step

BASELINE_KINDS = ("sum", "cascade", "logreg")


def load_cm_scores(path: str) -> dict[str, float]:
    """Parse an ID<TAB>score file ('#' comments allowed)."""
    from .core import _data_lines

    table: dict[str, float] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: malformed line, expected ID<TAB>score")
        utt_id, text = parts
        if utt_id in table:
            raise DataError(f"{path}:{lineno}: duplicate id {utt_id!r}")
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad score {text!r}") from None
        if not np.isfinite(value):
            raise DataError(f"{path}:{lineno}: non-finite score")
        table[utt_id] = value
    if not table:
        raise DataError(f"{path}: no scores found")
    return table


class CmScoreSource:
    """Uniform lookup of per-utterance CM scores."""

    def __init__(self, lookup, label: str):
        self._lookup = lookup
        self.label = label

    @classmethod
    def from_table(cls, table: dict[str, float]) -> "CmScoreSource":
        def lookup(test_id: str) -> float:
            try:
                return table[test_id]
            except KeyError:
                raise DataError(f"no CM score for test id {test_id!r}") from None

        return cls(lookup, "score file")

    @classmethod
    def from_model(cls, model: IntegrationModel, sv_store: EmbeddingStore,
                   cm_store: EmbeddingStore) -> "CmScoreSource":
        if model.mode is InputMode.CONCAT_PLUS_ENROLL:
            raise DataError(
                "a concat_plus_enroll model conditions on the enrollment, its "
                "spoofing score is not a per-utterance CM score"
            )
        cache: dict[str, float] = {}

        def lookup(test_id: str) -> float:
            if test_id not in cache:
                x = model.assemble_input(
                    np.empty(0), sv_store.vector(test_id), cm_store.vector(test_id)
                )
                cache[test_id] = float(model.spoof_scores(x[None, :])[0])
            return cache[test_id]

        return cls(lookup, "cm model")

    def scores_for(self, protocol: Protocol) -> np.ndarray:
        return np.array([self._lookup(t.test_id) for t in protocol.trials])


def sv_scores_for(protocol: Protocol, sv_store: EmbeddingStore) -> np.ndarray:
    out = np.empty(len(protocol))
    for i, t in enumerate(protocol.trials):
        out[i] = cosine(sv_store.vector(t.enroll_id), sv_store.vector(t.test_id))
    return out


def sum_fusion(s_sv, s_cm) -> np.ndarray:
    return np.asarray(s_sv, dtype=np.float64) + np.asarray(s_cm, dtype=np.float64)


def cascade_scores(s_sv, s_cm, tau: float) -> np.ndarray:
    """CM gate then SV: trials with s_cm below tau get a floor score one below
    the smallest SV score in the set, everything else passes through with s_sv."""
    s_sv = np.asarray(s_sv, dtype=np.float64)
    s_cm = np.asarray(s_cm, dtype=np.float64)
    floor = float(s_sv.min()) - 1.0
    return np.where(s_cm < tau, floor, s_sv)


def _sasv_eer_of(scores: np.ndarray, is_target: np.ndarray) -> float:
    return eer(scores[is_target], scores[~is_target]).eer


def fit_cascade(s_sv, s_cm, labels: list[TrialLabel]) -> float:
    """Pick the CM gate threshold minimizing dev SASV-EER.

    Candidates are every distinct dev CM score plus the midpoints of adjacent
    distinct values, scanned in ascending order so ties keep the smallest.
    """
    s_sv = np.asarray(s_sv, dtype=np.float64)
    s_cm = np.asarray(s_cm, dtype=np.float64)
    is_target = np.array([lab is TrialLabel.TARGET for lab in labels])
    if not is_target.any() or is_target.all():
        raise DataError("cascade fitting needs target and nontarget/spoof trials")
    distinct = np.unique(s_cm)
    candidates = list(distinct) + list((distinct[:-1] + distinct[1:]) / 2.0)
    candidates.sort()
    best_tau = candidates[0]
    best_eer = np.inf
    for tau in candidates:
        e = _sasv_eer_of(cascade_scores(s_sv, s_cm, tau), is_target)
        if e < best_eer:
            best_eer = e
            best_tau = tau
    return float(best_tau)


@dataclass
class LogisticFusion:
    weight: np.ndarray  # [w_sv, w_cm]
    bias: float

    def probability(self, s_sv, s_cm) -> np.ndarray:
        u = (self.weight[0] * np.asarray(s_sv, dtype=np.float64)
             + self.weight[1] * np.asarray(s_cm, dtype=np.float64) + self.bias)
        return sigmoid(u)


def fit_logreg(s_sv, s_cm, labels: list[TrialLabel], steps: int = 1000,
               lr: float = 1e-2) -> LogisticFusion:
    """Binary logistic regression (target = 1) on the two scores.

    Full-batch Adam from zero-initialized weights; the sigmoid output is the
    fused score.
    """
    s_sv = np.asarray(s_sv, dtype=np.float64)
    s_cm = np.asarray(s_cm, dtype=np.float64)
    y = np.array([1.0 if lab is TrialLabel.TARGET else 0.0 for lab in labels])
    if y.min() == y.max():
        raise DataError("logreg fitting needs target and nontarget/spoof trials")
    params = {"weight": np.zeros(2), "bias": np.array(0.0)}
    adam = AdamState(params)
    n = y.size
    for _ in range(steps):
        u = params["weight"][0] * s_sv + params["weight"][1] * s_cm + params["bias"]
        r = (sigmoid(u) - y) / n
        grads = {
            "weight": np.array([r @ s_sv, r @ s_cm]),
            "bias": np.array(r.sum()),
        }
        adam_step(adam, params, grads, lr)
    return LogisticFusion(weight=params["weight"].copy(), bias=float(params["bias"]))


def baseline_records(kind: str, protocol: Protocol, s_sv: np.ndarray,
                     s_cm: np.ndarray, fitted=None) -> list[ScoreRecord]:
    """Score records for a fused baseline; the s_spf column carries the CM score."""
    if kind == "sum":
        fused = sum_fusion(s_sv, s_cm)
    elif kind == "cascade":
        fused = cascade_scores(s_sv, s_cm, float(fitted))
    elif kind == "logreg":
        fused = fitted.probability(s_sv, s_cm)
    else:
        raise DataError(f"unknown baseline kind {kind!r}, expected {BASELINE_KINDS}")
    return [
        ScoreRecord(t, float(s_sv[i]), float(s_cm[i]), float(fused[i]))
        for i, t in enumerate(protocol.trials)
    ]


def logreg_to_checkpoint(fitted: LogisticFusion) -> Checkpoint:
    return Checkpoint(kind="logreg", meta={},
                      arrays={"weight": fitted.weight, "bias": np.array(fitted.bias)})


def logreg_from_checkpoint(ckpt: Checkpoint) -> LogisticFusion:
    if ckpt.kind != "logreg":
        raise DataError(f"expected a logreg checkpoint, got {ckpt.kind!r}")
    return LogisticFusion(weight=ckpt.arrays["weight"].copy(),
                          bias=float(ckpt.arrays["bias"]))


def cascade_to_checkpoint(tau: float) -> Checkpoint:
    return Checkpoint(kind="cascade", meta={}, arrays={"tau": np.array(tau)})


def cascade_from_checkpoint(ckpt: Checkpoint) -> float:
    if ckpt.kind != "cascade":
        raise DataError(f"expected a cascade checkpoint, got {ckpt.kind!r}")
    return float(ckpt.arrays["tau"])
