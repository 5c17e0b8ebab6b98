"""Stochastic training of the composed denoiser.

Every step samples batch_size scenes uniformly with replacement, draws one
(t, eps) per scene, noises the clean image, and applies one optimizer update
on the batch mean of ||eps - sum_k predict(x^t, t | c^k)||^2 (squared L2 over
pixels, concepts summed per scene).  Draw order is fixed: batch indices
first, then per scene t followed by eps.  Given (seed, config, dataset) the
loss trace and the final float32 parameters are bitwise reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import NumericError, ParameterError
from .network import (
    Architecture,
    DenoiserParams,
    build_queries,
    grads_to_dict,
    init_params,
    save_params,
)
from .schedule import NoiseSchedule

OPT_ADAM = "adaptive-moment"
OPT_SGD = "plain-sgd"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 128
    step_budget: int = 1000
    optimizer: str = OPT_ADAM
    seed: int = 0
    gradient_clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.step_budget < 1:
            raise ParameterError(f"step_budget must be >= 1, got {self.step_budget}")
        if self.optimizer not in (OPT_ADAM, OPT_SGD):
            raise ParameterError(f"optimizer must be {OPT_ADAM!r} or {OPT_SGD!r}")


@dataclass
class TrainReport:
    loss_trace: np.ndarray
    params: DenoiserParams
    wall_clock: float
    steps: int


class OptimizerState:
    """Adam moments (unused for plain SGD) plus the global step counter."""

    def __init__(self, params: DenoiserParams):
        self.step = 0
        self.m = {k: np.zeros(v.shape) for k, v in params.arrays.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.arrays.items()}


def _batch_loss_and_grads(params, batch, schedule, gen):
    """One noising draw per scene; returns (mean loss, parameter grads)."""
    arch = params.arch
    n = arch.n_pixels
    counts = []
    xts, targets, qs = [], [], []
    for x0, cset in batch:
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        if x0.size != n:
            raise ParameterError(f"scene image has {x0.size} pixels, expected {n}")
        t = int(gen.integers(1, schedule.step_count + 1))
        eps = gen.standard_normal(n)
        s, w = schedule.coeffs(t)
        xt = s * x0 + w * eps
        C = cset.matrix()
        counts.append(C.shape[0])
        xts.append(np.tile(xt, (C.shape[0], 1)))
        targets.append(eps)
        qs.append(build_queries(arch, t, C))

    B = len(batch)
    X = np.concatenate(xts, axis=0)
    Q = np.concatenate(qs, axis=0)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    layers, out = params.f64_views()
    EPS, cache = kernels.forward(layers, out, X, Q, True)
    sums = np.add.reduceat(EPS, starts, axis=0)
    resid = np.stack(targets) - sums
    loss = float(np.einsum("bn,bn->b", resid, resid).mean())
    dEPS = np.repeat(-(2.0 / B) * resid, counts, axis=0)
    pg, _ = kernels.backward(layers, out, X, Q, cache, dEPS, True, False)
    return loss, grads_to_dict(params.arch, pg)


def _clip_grads(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return grads


def train_step(params: DenoiserParams, batch, schedule: NoiseSchedule,
               config: TrainConfig, gen, opt_state: OptimizerState):
    """One optimizer update in place; returns (params, pre-update batch loss)."""
    if not batch:
        raise ParameterError("batch is empty")
    loss, grads = _batch_loss_and_grads(params, batch, schedule, gen)
    if not np.isfinite(loss):
        raise NumericError("training loss is not finite", step=opt_state.step)
    if config.gradient_clip_norm is not None:
        grads = _clip_grads(grads, config.gradient_clip_norm)

    opt_state.step += 1
    lr = config.learning_rate
    if config.optimizer == OPT_ADAM:
        b1c = 1.0 - ADAM_BETA1 ** opt_state.step
        b2c = 1.0 - ADAM_BETA2 ** opt_state.step
        for k, g in grads.items():
            m = opt_state.m[k]
            v = opt_state.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            update = lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
            params.arrays[k] = (params.arrays[k].astype(np.float64) - update).astype(np.float32)
    else:
        for k, g in grads.items():
            params.arrays[k] = (params.arrays[k].astype(np.float64) - lr * g).astype(np.float32)
    params.invalidate()
    return params, loss


def train_loop(dataset, schedule: NoiseSchedule, config: TrainConfig,
               arch: Architecture | None = None,
               hidden_sizes: tuple[int, ...] = (64, 64),
               time_embed_dim: int = 16,
               concept_encoding: str | None = None, rbf_grid: int = 6,
               checkpoint_dir=None, checkpoint_every: int | None = None,
               log_every: int | None = None) -> TrainReport:
    """Run step_budget updates over the dataset; fully seeded end to end.

    Unless an explicit Architecture is given, one is derived from the dataset
    header; coordinate concepts default to the rbf encoding, label concepts
    to raw.
    """
    records = getattr(dataset, "records", None)
    if not records:
        raise ParameterError("dataset is empty")
    header = dataset.header
    if arch is None:
        if concept_encoding is None:
            concept_encoding = "rbf" if header.concept_kind == "continuous-coordinate" else "raw"
        arch = Architecture(
            image_shape=tuple(header.image_shape),
            concept_dim=header.concept_dim,
            step_count=schedule.step_count,
            hidden_sizes=tuple(hidden_sizes),
            time_embed_dim=time_embed_dim,
            concept_encoding=concept_encoding,
            rbf_grid=rbf_grid,
        )
    init_ss, step_ss = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(arch, init_ss)
    gen = np.random.default_rng(step_ss)
    opt_state = OptimizerState(params)
    scenes = [(rec.image, rec.concepts) for rec in records]

    schedule_config = {
        "steps": schedule.step_count,
        "beta_start": float(schedule.betas[0]),
        "beta_end": float(schedule.betas[-1]),
    }
    started = time.perf_counter()
    losses = np.empty(config.step_budget)
    for step in range(config.step_budget):
        idx = gen.integers(0, len(scenes), config.batch_size)
        batch = [scenes[i] for i in idx]
        _, losses[step] = train_step(params, batch, schedule, config, gen, opt_state)
        if checkpoint_dir is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            save_params(params, f"{checkpoint_dir}/checkpoint_{step + 1:06d}.ckpt",
                        schedule_config)
        if log_every and (step + 1) % log_every == 0:
            recent = losses[max(0, step - 49):step + 1].mean()
            print(f"step {step + 1:6d}  loss {losses[step]:.4f}  (mean50 {recent:.4f})")
    return TrainReport(
        loss_trace=losses, params=params,
        wall_clock=time.perf_counter() - started, steps=config.step_budget,
    )


def write_loss_csv(path, loss_trace) -> None:
    with open(path, "w") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(loss_trace):
            f.write(f"{i + 1},{float(loss)!r}\n")


def smoothed(trace, window: int = 50) -> np.ndarray:
    """Trailing-window mean of a loss trace (window clipped at the start)."""
    trace = np.asarray(trace, dtype=np.float64)
    out = np.empty_like(trace)
    for i in range(len(trace)):
        out[i] = trace[max(0, i - window + 1):i + 1].mean()
    return out
