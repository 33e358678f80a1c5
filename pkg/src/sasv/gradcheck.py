"""Central finite-difference verification of the analytic gradients.

Each check builds a scalar loss, takes the hand-written backward pass, then
perturbs parameters one coordinate at a time by +-h and compares. Relative
error uses max(|analytic|, |numeric|, 1e-8) in the denominator so near-zero
gradients do not blow up the ratio.
"""

from __future__ import annotations

import numpy as np

from .loss import OneClassSoftmaxConfig, one_class_softmax
from .model import InputMode, IntegrationModel
from .neuralnet import (BatchNormLayer, CosineHead, GradientTape, LeakyReluLayer,
                        LinearLayer)

FD_STEP = 1e-5
REL_TOL = 1e-4
COMPONENTS = ("linear", "batch_norm", "leaky_relu", "cosine_head", "composite")


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def check_gradients(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                    loss_fn, h: float = FD_STEP, coords_per_param: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic gradients and central differences.

    coords_per_param=None sweeps every coordinate; otherwise that many are
    sampled per parameter from rng. Parameters are restored exactly after
    each probe.
    """
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        size = flat.size
        if coords_per_param is None or coords_per_param >= size:
            coords = range(size)
        else:
            coords = rng.choice(size, size=coords_per_param, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn()
            flat[idx] = orig - h
            down = loss_fn()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, relative_error(float(gflat[idx]), numeric))
    return worst


def _away_from_kink(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    # keep finite differencing off the leaky-relu corner
    return np.where(np.abs(x) < margin, margin, x)


def check_linear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = LinearLayer.init(rng, 5, 7)
    x = rng.normal(size=(4, 5))
    upstream = rng.normal(size=(4, 7))

    def loss_fn():
        return float((layer.forward(x) * upstream).sum())

    tape = GradientTape()
    layer.forward(x, tape)
    gx = tape.backward(upstream)
    params = {"weight": layer.weight, "bias": layer.bias, "x": x}
    grads = {"weight": tape.grads["linear.weight"],
             "bias": tape.grads["linear.bias"], "x": gx}
    return check_gradients(params, grads, loss_fn)


def check_batch_norm(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = BatchNormLayer(6)
    layer.gamma[:] = rng.normal(size=6)
    layer.beta[:] = rng.normal(size=6)
    x = rng.normal(size=(5, 6))
    upstream = rng.normal(size=(5, 6))

    def loss_fn():
        return float((layer.forward(x, GradientTape()) * upstream).sum())

    tape = GradientTape()
    layer.forward(x, tape)
    gx = tape.backward(upstream)
    params = {"gamma": layer.gamma, "beta": layer.beta, "x": x}
    grads = {"gamma": tape.grads["bn.gamma"], "beta": tape.grads["bn.beta"], "x": gx}
    return check_gradients(params, grads, loss_fn)


def check_leaky_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = LeakyReluLayer()
    x = _away_from_kink(rng.normal(size=(4, 6)))
    upstream = rng.normal(size=(4, 6))

    def loss_fn():
        return float((layer.forward(x) * upstream).sum())

    tape = GradientTape()
    layer.forward(x, tape)
    gx = tape.backward(upstream)
    return check_gradients({"x": x}, {"x": gx}, loss_fn)


def check_cosine_head(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = CosineHead.init(rng, 6)
    e = rng.normal(size=(4, 6))
    upstream = rng.normal(size=4)

    def loss_fn():
        return float(layer.forward(e) @ upstream)

    tape = GradientTape()
    layer.forward(e, tape)
    ge = tape.backward(upstream)
    params = {"direction": layer.direction, "e": e}
    grads = {"direction": tape.grads["head.direction"], "e": ge}
    return check_gradients(params, grads, loss_fn)


def _composite_inputs(model: IntegrationModel, rng: np.random.Generator,
                      batch: int, margin: float = 1e-4):
    # redraw until no pre-activation sits within `margin` of a leaky-relu kink,
    # otherwise the central difference straddles the corner
    for _ in range(100):
        x = rng.normal(size=(batch, model.input_dim))
        tape = GradientTape()
        h = model.bn.forward(x, tape)
        closest = np.inf
        for lin, act in ((model.h1, model.act1), (model.h2, model.act2),
                         (model.h3, model.act3)):
            pre = lin.forward(h)
            closest = min(closest, float(np.abs(pre).min()))
            h = act.forward(pre)
        if closest > margin:
            return x
    raise RuntimeError("could not draw kink-free composite inputs")


def check_composite(seed: int, coords_per_param: int | None = 48,
                    sv_dim: int = 8, cm_dim: int = 8, batch: int = 6) -> float:
    """Full integration model plus the one-class loss, every parameter checked
    (sampled coordinates by default; the real 256/128/64 stack is ~50k params)."""
    rng = np.random.default_rng(seed)
    model = IntegrationModel(InputMode.CONCAT, sv_dim, cm_dim, rng)
    x = _composite_inputs(model, rng, batch)
    s_sv = rng.uniform(-1.0, 1.0, size=batch)
    z = rng.integers(0, 2, size=batch)
    loss_cfg = OneClassSoftmaxConfig()

    def loss_fn():
        s_spf = model.spoof_scores(x, GradientTape())
        value, _ = one_class_softmax(loss_cfg, model.fuse(s_sv, s_spf), z)
        return value

    tape = GradientTape()
    s_spf = model.spoof_scores(x, tape)
    _, g_sasv = one_class_softmax(loss_cfg, model.fuse(s_sv, s_spf), z)
    tape.backward(g_sasv)
    grads = dict(tape.grads)
    grads["sv_weight"] = np.array(float(g_sasv @ s_sv))
    return check_gradients(model.named_parameters(), grads, loss_fn,
                           coords_per_param=coords_per_param, rng=rng)


def run_gradient_checks(seeds=range(10), coords_per_param: int | None = 48) -> dict[str, float]:
    """Worst relative error per component across the given seeds."""
    checks = {
        "linear": check_linear,
        "batch_norm": check_batch_norm,
        "leaky_relu": check_leaky_relu,
        "cosine_head": check_cosine_head,
    }
    worst = {name: 0.0 for name in COMPONENTS}
    for seed in seeds:
        for name, fn in checks.items():
            worst[name] = max(worst[name], fn(seed))
        worst["composite"] = max(
            worst["composite"], check_composite(seed, coords_per_param))
    return worst
