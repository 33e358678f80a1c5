"""Joint training of the integration net and the SV fusion weight.

Adam with bias-corrected moments, seeded epoch shuffling, and best-epoch
selection on dev SASV-EER (ties keep the earlier epoch). The SV cosine inputs
are computed once up front since the subsystem embeddings are frozen.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import Checkpoint
from .core import (DataError, EmbeddingStore, NumericError, Protocol, TrialLabel,
                   check_protocol_ids)
from .loss import OneClassSoftmaxConfig, one_class_softmax
from .metrics import sasv_report
from .model import InputMode, IntegrationModel, score_protocol
from .neuralnet import GradientTape

log = logging.getLogger(__name__)

HISTORY_CSV_HEADER = ["epoch", "train_loss", "dev_sv_eer", "dev_spf_eer", "dev_sasv_eer"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 24
    epochs: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_sv_eer: float | None
    dev_spf_eer: float | None
    dev_sasv_eer: float


@dataclass
class TrainResult:
    model: IntegrationModel
    history: list[EpochStats]
    best_epoch: int
    best_dev_sasv_eer: float


class AdamState:
    def __init__(self, params: dict[str, np.ndarray]):
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update over every parameter."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _require_classes(protocol: Protocol, role: str) -> None:
    n_target = protocol.counts()[TrialLabel.TARGET]
    n_other = len(protocol) - n_target
    if n_target == 0 or n_other == 0:
        raise DataError(
            f"{role} protocol needs at least one target and one nontarget/spoof trial"
        )


def _snapshot(model: IntegrationModel) -> dict[str, np.ndarray]:
    state = {name: p.copy() for name, p in model.named_parameters().items()}
    state["bn.running_mean"] = model.bn.running_mean.copy()
    state["bn.running_var"] = model.bn.running_var.copy()
    return state


def _restore(model: IntegrationModel, state: dict[str, np.ndarray]) -> None:
    params = model.named_parameters()
    for name, p in params.items():
        np.copyto(p, state[name])
    np.copyto(model.bn.running_mean, state["bn.running_mean"])
    np.copyto(model.bn.running_var, state["bn.running_var"])


def train(model: IntegrationModel, sv_store: EmbeddingStore, cm_store: EmbeddingStore,
          train_protocol: Protocol, dev_protocol: Protocol, cfg: TrainConfig,
          loss_cfg: OneClassSoftmaxConfig) -> TrainResult:
    if cfg.epochs < 1:
        raise DataError("epochs must be >= 1")
    if cfg.batch_size < 2:
        raise DataError("batch size must be >= 2 (batch norm needs batch statistics)")
    if cfg.learning_rate < 0.0:
        raise DataError("learning rate must be non-negative")
    _require_classes(train_protocol, "train")
    _require_classes(dev_protocol, "dev")
    check_protocol_ids(train_protocol, sv_store, cm_store)
    check_protocol_ids(dev_protocol, sv_store, cm_store)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    x_all, s_sv_all = model.assemble_batch(train_protocol.trials, sv_store, cm_store)
    z_all = np.array([t.label.z for t in train_protocol.trials])
    n = len(train_protocol)

    params = model.named_parameters()
    adam = AdamState(params)
    history: list[EpochStats] = []
    best_state: dict[str, np.ndarray] | None = None
    best_metric = math.inf
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        used = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue  # a leftover single trial cannot be batch-normalized
            tape = GradientTape()
            s_spf = model.spoof_scores(x_all[idx], tape)
            s_sasv = model.fuse(s_sv_all[idx], s_spf)
            batch_loss, g_sasv = one_class_softmax(loss_cfg, s_sasv, z_all[idx])
            if not math.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            tape.backward(g_sasv)  # d s_sasv / d s_spf = 1
            grads = dict(tape.grads)
            grads["sv_weight"] = np.array(float(g_sasv @ s_sv_all[idx]))
            adam_step(adam, params, grads, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
            loss_sum += batch_loss * idx.size
            used += idx.size
        train_loss = loss_sum / used
        dev_records = score_protocol(model, dev_protocol, sv_store, cm_store)
        report = sasv_report(dev_records)
        stats = EpochStats(
            epoch=epoch,
            train_loss=train_loss,
            dev_sv_eer=report.sv.eer if report.sv else None,
            dev_spf_eer=report.spf.eer if report.spf else None,
            dev_sasv_eer=report.sasv.eer,
        )
        history.append(stats)
        log.info("epoch %d/%d  loss %.6f  dev sasv-eer %.2f%%",
                 epoch, cfg.epochs, train_loss, 100.0 * report.sasv.eer)
        if report.sasv.eer < best_metric:
            best_metric = report.sasv.eer
            best_epoch = epoch
            best_state = _snapshot(model)

    _restore(model, best_state)
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_dev_sasv_eer=best_metric)


def write_history(history: list[EpochStats], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_CSV_HEADER)
        for row in history:
            writer.writerow([
                row.epoch,
                f"{row.train_loss:.17g}",
                "" if row.dev_sv_eer is None else f"{row.dev_sv_eer:.17g}",
                "" if row.dev_spf_eer is None else f"{row.dev_spf_eer:.17g}",
                f"{row.dev_sasv_eer:.17g}",
            ])


_ARRAY_ORDER_SUFFIX = ["bn.running_mean", "bn.running_var"]


def model_to_checkpoint(model: IntegrationModel, train_cfg: TrainConfig,
                        loss_cfg: OneClassSoftmaxConfig, best_epoch: int,
                        best_dev_sasv_eer: float) -> Checkpoint:
    meta = {
        "mode": model.mode.value,
        "sv_dim": model.sv_dim,
        "cm_dim": model.cm_dim,
        "normalize_embeddings": model.normalize_embeddings,
        "train": asdict(train_cfg),
        "loss": asdict(loss_cfg),
        "best_epoch": best_epoch,
        "best_dev_sasv_eer": best_dev_sasv_eer,
    }
    arrays = dict(model.named_parameters())
    arrays["bn.running_mean"] = model.bn.running_mean
    arrays["bn.running_var"] = model.bn.running_var
    return Checkpoint(kind="integration", meta=meta, arrays=arrays)


def model_from_checkpoint(ckpt: Checkpoint) -> IntegrationModel:
    if ckpt.kind != "integration":
        raise DataError(f"expected an integration checkpoint, got kind {ckpt.kind!r}")
    meta = ckpt.meta
    try:
        mode = InputMode(meta["mode"])
        model = IntegrationModel(
            mode, int(meta["sv_dim"]), int(meta["cm_dim"]),
            rng=np.random.default_rng(0),
            normalize_embeddings=bool(meta["normalize_embeddings"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad integration checkpoint metadata: {exc}") from None
    expected = dict(model.named_parameters())
    expected["bn.running_mean"] = model.bn.running_mean
    expected["bn.running_var"] = model.bn.running_var
    if set(expected) != set(ckpt.arrays):
        missing = sorted(set(expected) ^ set(ckpt.arrays))
        raise DataError(f"checkpoint arrays do not match the model: {missing}")
    for name, target in expected.items():
        src = ckpt.arrays[name]
        if src.shape != target.shape:
            raise DataError(
                f"checkpoint array {name!r} has shape {src.shape}, "
                f"expected {target.shape}"
            )
        np.copyto(target, src)
    return model
