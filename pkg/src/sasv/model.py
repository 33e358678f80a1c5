"""Score-integration model.

A small dense net consumes stacked subsystem embeddings for a trial and emits
a 64-dim spoofing embedding; its cosine against a trained direction vector is
the spoofing score s_spf. The final score fuses the frozen SV cosine with it:

    s_sasv = sv_weight * s_sv + s_spf

where sv_weight is a trained scalar initialized at 1. The input mode decides
what the net sees: test SV + test CM embeddings (concat), the CM embedding
alone (cm_only), or both plus the enrollment embedding (concat_plus_enroll).
In the first two modes s_spf is by construction a function of the test
utterance only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy as np

from .core import (DataError, EmbeddingStore, Protocol, ScoreRecord, Trial,
                   check_protocol_ids, cosine)
from .neuralnet import (BatchNormLayer, CosineHead, GradientTape, LeakyReluLayer,
                        LinearLayer)

HIDDEN_SIZES = (256, 128, 64)
EMBED_DIM = 64
SCORE_BATCH = 256


class InputMode(Enum):
    CONCAT = "concat"
    CM_ONLY = "cm_only"
    CONCAT_PLUS_ENROLL = "concat_plus_enroll"

    def input_dim(self, sv_dim: int, cm_dim: int) -> int:
        if self is InputMode.CONCAT:
            return sv_dim + cm_dim
        if self is InputMode.CM_ONLY:
            return cm_dim
        return 2 * sv_dim + cm_dim

    @property
    def uses_enrollment(self) -> bool:
        return self is InputMode.CONCAT_PLUS_ENROLL

    @classmethod
    def parse(cls, text: str) -> "InputMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise DataError(
                f"unknown input mode {text!r} (expected concat, cm_only or "
                "concat_plus_enroll)"
            ) from None


class IntegrationModel:
    def __init__(self, mode: InputMode, sv_dim: int, cm_dim: int,
                 rng: np.random.Generator, normalize_embeddings: bool = False):
        if sv_dim < 1 or cm_dim < 1:
            raise DataError("embedding dimensions must be positive")
        self.mode = mode
        self.sv_dim = sv_dim
        self.cm_dim = cm_dim
        self.normalize_embeddings = normalize_embeddings
        d_in = mode.input_dim(sv_dim, cm_dim)
        self.bn = BatchNormLayer(d_in, name="bn")
        self.h1 = LinearLayer.init(rng, d_in, HIDDEN_SIZES[0], name="h1")
        self.h2 = LinearLayer.init(rng, HIDDEN_SIZES[0], HIDDEN_SIZES[1], name="h2")
        self.h3 = LinearLayer.init(rng, HIDDEN_SIZES[1], HIDDEN_SIZES[2], name="h3")
        self.proj = LinearLayer.init(rng, HIDDEN_SIZES[2], EMBED_DIM, name="proj")
        self.head = CosineHead.init(rng, EMBED_DIM, name="head")
        self.act1 = LeakyReluLayer(name="act1")
        self.act2 = LeakyReluLayer(name="act2")
        self.act3 = LeakyReluLayer(name="act3")
        # fused-score weight on the SV cosine, trained jointly with the net
        self.sv_weight = np.array(1.0)

    @property
    def input_dim(self) -> int:
        return self.mode.input_dim(self.sv_dim, self.cm_dim)

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters in a fixed order; the arrays are live references."""
        params: dict[str, np.ndarray] = {}
        for layer in (self.bn, self.h1, self.h2, self.h3, self.proj, self.head):
            for pname, arr in layer.parameters().items():
                params[f"{layer.name}.{pname}"] = arr
        params["sv_weight"] = self.sv_weight
        return params

    def assemble_input(self, enroll_vec: np.ndarray, test_sv: np.ndarray,
                       test_cm: np.ndarray) -> np.ndarray:
        if self.mode is InputMode.CONCAT:
            return np.concatenate([test_sv, test_cm])
        if self.mode is InputMode.CM_ONLY:
            return np.asarray(test_cm, dtype=np.float64)
        return np.concatenate([test_sv, test_cm, enroll_vec])

    def assemble_batch(self, trials: list[Trial], sv_store: EmbeddingStore,
                       cm_store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
        """Stack network inputs and compute the frozen SV cosines for a trial list."""
        rows = []
        s_sv = np.empty(len(trials))
        for i, t in enumerate(trials):
            enroll = sv_store.vector(t.enroll_id)
            test_sv = sv_store.vector(t.test_id)
            test_cm = cm_store.vector(t.test_id)
            rows.append(self.assemble_input(enroll, test_sv, test_cm))
            s_sv[i] = cosine(enroll, test_sv)
        return np.stack(rows), s_sv

    def spoof_scores(self, x: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
        """Forward [N, input_dim] -> s_spf [N]. tape=None runs in eval mode."""
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DataError(
                f"expected input of shape [N, {self.input_dim}], got {x.shape}"
            )
        h = self.bn.forward(x, tape)
        h = self.act1.forward(self.h1.forward(h, tape), tape)
        h = self.act2.forward(self.h2.forward(h, tape), tape)
        h = self.act3.forward(self.h3.forward(h, tape), tape)
        e_spf = self.proj.forward(h, tape)
        return self.head.forward(e_spf, tape)

    def fuse(self, s_sv: np.ndarray, s_spf: np.ndarray) -> np.ndarray:
        return float(self.sv_weight) * np.asarray(s_sv) + np.asarray(s_spf)


def _score_chunk(model: IntegrationModel, trials: list[Trial],
                 sv_store: EmbeddingStore, cm_store: EmbeddingStore) -> list[ScoreRecord]:
    x, s_sv = model.assemble_batch(trials, sv_store, cm_store)
    s_spf = model.spoof_scores(x)
    s_sasv = model.fuse(s_sv, s_spf)
    return [
        ScoreRecord(t, float(s_sv[i]), float(s_spf[i]), float(s_sasv[i]))
        for i, t in enumerate(trials)
    ]


def score_protocol(model: IntegrationModel, protocol: Protocol,
                   sv_store: EmbeddingStore, cm_store: EmbeddingStore,
                   threads: int = 1) -> list[ScoreRecord]:
    """Score every trial in eval mode, in protocol order.

    Chunking is fixed at SCORE_BATCH rows regardless of thread count, so the
    numbers are bit-identical whether scored serially or in parallel.
    """
    if len(protocol) == 0:
        raise DataError("cannot score an empty protocol")
    check_protocol_ids(protocol, sv_store, cm_store)
    chunks = [protocol.trials[i:i + SCORE_BATCH]
              for i in range(0, len(protocol.trials), SCORE_BATCH)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda c: _score_chunk(model, c, sv_store, cm_store), chunks))
    else:
        parts = [_score_chunk(model, c, sv_store, cm_store) for c in chunks]
    return [rec for part in parts for rec in part]
