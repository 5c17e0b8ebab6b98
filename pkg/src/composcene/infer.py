"""Inverse inference: denoising-error scoring and the search algorithms on it.

Every routine ranks concept hypotheses by the Monte Carlo denoising error

    E(c^1..c^K) = sum_i || eps_i - sum_k model(x^{t_i}, t_i | c^k) ||^2

accumulated over one shared list of (t_i, eps_i) draws, so two hypotheses in
the same table differ only through their conditioning.  Draw order is fixed
(t first, then eps, per sample) and every reduction runs in a deterministic
order; identical seeds reproduce every error bitwise.

Search strategies:
  * infer_discrete_enumerate   - exhaustive scoring of all label tuples
  * infer_continuous_sgd       - multi-restart SGD on continuous concepts
  * infer_concept_count        - outer argmin over the number of concepts
  * infer_discrete_relaxed     - gradient search through relaxed labels
  * infer_weighted_composition - gradient search over per-concept weights

Models are anything with the interface of network.NetworkModel or
oracle.GaussianBlobOracle: residuals(), concept_grads(), predict_terms().
"""

from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .concepts import ConceptSet, ConceptVector, coordinate_concept, onehot_set
from .errors import EnumerationCapError, ParameterError, ShapeError
from .schedule import NoiseSchedule

ENUMERATION_CAP = 4096


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs shared by the inference algorithms.

    timestep_range restricts the sampled t to an inclusive sub-range of
    {1..T}; None follows the algorithms and uses the full range.
    nested_restarts makes every restart's trajectory (and final score)
    bitwise independent of how many other restarts run alongside it, so
    restart counts can be compared as exact prefixes of one another.
    """

    n_sample: int = 64
    n_step: int = 200
    restarts: int = 8
    concept_lr: float = 0.05
    k_min: int = 1
    k_max: int = 1
    prune_cadence: int | None = None
    prune_fraction: float = 0.5
    seed: int = 0
    warmup_steps: int = 10
    init_mode: str = "uniform"
    timestep_range: tuple[int, int] | None = None
    ema_decay: float = 0.9
    nested_restarts: bool = True
    record_paths: bool = False
    max_step: float | None = None

    def __post_init__(self):
        if self.n_sample < 1:
            raise ParameterError(f"n_sample must be >= 1, got {self.n_sample}")
        if self.n_step < 0:
            raise ParameterError(f"n_step must be >= 0, got {self.n_step}")
        if self.restarts < 1:
            raise ParameterError(f"restarts must be >= 1, got {self.restarts}")
        if self.concept_lr < 0:
            raise ParameterError(f"concept_lr must be >= 0, got {self.concept_lr}")
        if not 1 <= self.k_min <= self.k_max:
            raise ParameterError(f"need 1 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if not 0.0 <= self.prune_fraction < 1.0:
            raise ParameterError(f"prune_fraction must lie in [0, 1), got {self.prune_fraction}")
        if self.init_mode not in ("uniform", "normal"):
            raise ParameterError(f"init_mode must be uniform or normal, got {self.init_mode!r}")


@dataclass(frozen=True)
class ErrorEntry:
    config_id: int
    error: float
    samples: int


@dataclass(frozen=True)
class ErrorTable:
    """Accumulated errors per configuration plus the descriptor of the shared
    sample list (the (t_i, eps_i) draws are reconstructible from the seed)."""

    entries: tuple[ErrorEntry, ...]
    seed: int
    n_sample: int
    timesteps: tuple[int, ...]

    def best(self) -> ErrorEntry:
        return min(self.entries, key=lambda e: (e.error, e.config_id))

    def to_dict(self) -> dict:
        return {
            "entries": [[e.config_id, e.error, e.samples] for e in self.entries],
            "seed": self.seed,
            "n_sample": self.n_sample,
            "timesteps": list(self.timesteps),
        }

    @classmethod
    def from_dict(cls, d) -> "ErrorTable":
        return cls(
            entries=tuple(ErrorEntry(int(i), float(e), int(n)) for i, e, n in d["entries"]),
            seed=int(d["seed"]),
            n_sample=int(d["n_sample"]),
            timesteps=tuple(int(t) for t in d["timesteps"]),
        )


@dataclass
class InferenceReport:
    """Outcome of one inference run: the chosen hypothesis and the evidence."""

    chosen: ConceptSet | None
    table: ErrorTable
    seed: int
    chosen_k: int | None = None
    chosen_indices: tuple[int, ...] | None = None
    restart_errors: tuple[float, ...] | None = None
    config: InferenceConfig | None = None
    details: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "chosen": None if self.chosen is None else {
                "kind": self.chosen.kind,
                "values": [list(map(float, c.values)) for c in self.chosen.concepts],
            },
            "chosen_k": self.chosen_k,
            "chosen_indices": None if self.chosen_indices is None else list(self.chosen_indices),
            "restart_errors": None if self.restart_errors is None else list(self.restart_errors),
            "table": self.table.to_dict(),
            "seed": self.seed,
            "config": None if self.config is None else asdict(self.config),
            "details": self.details,
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d

    @classmethod
    def from_dict(cls, d) -> "InferenceReport":
        chosen = None
        if d.get("chosen") is not None:
            chosen = ConceptSet(tuple(
                ConceptVector(np.asarray(v, dtype=np.float64), d["chosen"]["kind"])
                for v in d["chosen"]["values"]
            ))
        cfg = None
        if d.get("config"):
            raw = dict(d["config"])
            for key in ("timestep_range",):
                if raw.get(key) is not None:
                    raw[key] = tuple(raw[key])
            cfg = InferenceConfig(**raw)
        return cls(
            chosen=chosen,
            table=ErrorTable.from_dict(d["table"]),
            seed=int(d["seed"]),
            chosen_k=d.get("chosen_k"),
            chosen_indices=None if d.get("chosen_indices") is None else tuple(d["chosen_indices"]),
            restart_errors=None if d.get("restart_errors") is None else tuple(d["restart_errors"]),
            config=cfg,
            details=d.get("details", {}),
        )


def _t_bounds(schedule: NoiseSchedule, timestep_range) -> tuple[int, int]:
    if timestep_range is None:
        return 1, schedule.step_count
    lo, hi = int(timestep_range[0]), int(timestep_range[1])
    if not 1 <= lo <= hi <= schedule.step_count:
        raise ParameterError(
            f"timestep_range {timestep_range} outside [1, {schedule.step_count}]"
        )
    return lo, hi


def _draw_pair(gen, shape, lo, hi):
    t = int(gen.integers(lo, hi + 1))
    eps = gen.standard_normal(shape)
    return t, eps


def _seq_int(seed_seq) -> int:
    return int(seed_seq.generate_state(1, np.uint64)[0])


def denoising_error(model, x, candidates, schedule: NoiseSchedule,
                    n_sample: int, seed: int, timestep_range=None,
                    batch_candidates: bool = True) -> ErrorTable:
    """Score every candidate ConceptSet over one shared (t, eps) sample list.

    With batch_candidates=False each candidate goes through the model alone,
    which makes its accumulated error bitwise independent of the rest of the
    table (the draws are identical either way).
    """
    if len(candidates) < 1:
        raise ParameterError("candidates must be non-empty")
    matrices = [c.matrix() if isinstance(c, ConceptSet) else np.asarray(c, np.float64)
                for c in candidates]
    groups: dict[int, list[int]] = {}
    for j, m in enumerate(matrices):
        groups.setdefault(m.shape[0], []).append(j)

    x = np.asarray(x, dtype=np.float64)
    lo, hi = _t_bounds(schedule, timestep_range)
    gen = np.random.default_rng(seed)
    errors = np.zeros(len(candidates))
    timesteps = []
    for _ in range(n_sample):
        t, eps = _draw_pair(gen, x.shape, lo, hi)
        timesteps.append(t)
        for k in sorted(groups):
            ids = groups[k]
            if batch_candidates:
                sets = np.stack([matrices[j] for j in ids])
                res = model.residuals(x, eps, t, sets)
                errors[ids] += np.einsum("rn,rn->r", res, res)
            else:
                for j in ids:
                    res = model.residuals(x, eps, t, matrices[j][None])
                    errors[j] += float(np.einsum("rn,rn->r", res, res)[0])
    entries = tuple(
        ErrorEntry(j, float(errors[j]), n_sample) for j in range(len(candidates))
    )
    return ErrorTable(entries=entries, seed=int(seed), n_sample=n_sample,
                      timesteps=tuple(timesteps))


def infer_discrete_enumerate(model, x, vocabulary, schedule: NoiseSchedule,
                             config: InferenceConfig,
                             cap: int = ENUMERATION_CAP) -> InferenceReport:
    """Exhaustively score every label tuple; argmin wins, lowest id on ties.

    vocabulary is one list of candidate ConceptVectors per concept slot.
    """
    started = time.perf_counter()
    if not vocabulary or any(len(v) < 1 for v in vocabulary):
        raise ParameterError("vocabulary must provide at least one label per slot")
    total = 1
    for v in vocabulary:
        total *= len(v)
    if total > cap:
        raise EnumerationCapError(
            f"{total} configurations exceed the enumeration cap {cap}; "
            "use infer_discrete_relaxed for gradient-based search"
        )
    tuples = [ConceptSet(combo) for combo in itertools.product(*vocabulary)]
    table = denoising_error(model, x, tuples, schedule, config.n_sample,
                            config.seed, config.timestep_range)
    best = table.best()
    return InferenceReport(
        chosen=tuples[best.config_id], table=table, seed=config.seed,
        config=config, details={"n_configurations": total},
        wall_clock=time.perf_counter() - started,
    )


def _init_restarts(config, k, dim, lower, upper):
    """Per-restart seeded inits; restart r's draw never depends on R."""
    init_root = np.random.SeedSequence(config.seed).spawn(3)[0]
    children = init_root.spawn(config.restarts)
    sets = np.empty((config.restarts, k, dim))
    for r, child in enumerate(children):
        gen = np.random.default_rng(child)
        if config.init_mode == "uniform":
            sets[r] = gen.uniform(lower, upper, (k, dim))
        else:
            sets[r] = gen.standard_normal((k, dim))
    return sets


def _lr_at(config, n):
    if config.warmup_steps > 0 and n < config.warmup_steps:
        return config.concept_lr * (n + 1) / config.warmup_steps
    return config.concept_lr


def _apply_step(C_r, grads, lr, lower, upper, max_step):
    step = lr * grads
    if max_step is not None:
        norms = np.sqrt((step * step).sum(axis=-1, keepdims=True))
        scale = np.minimum(1.0, max_step / np.maximum(norms, 1e-300))
        step = step * scale
    return np.clip(C_r - step, lower, upper)


def infer_continuous_sgd(model, x, k: int, schedule: NoiseSchedule,
                         config: InferenceConfig, lower: float = 0.0,
                         upper: float = 1.0, init_sets=None,
                         final_seed=None) -> InferenceReport:
    """Multi-restart SGD over K continuous concepts with argmin selection.

    Each step draws a single fresh (t, eps) shared by every live restart;
    iterates are projected into [lower, upper] after each update.  When
    prune_cadence is set, the worst prune_fraction of restarts (by running
    EMA of step losses) is dropped at that cadence, always keeping at least
    one.  Survivors are re-scored on a fresh shared list of n_sample draws.
    """
    started = time.perf_counter()
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    dim = model.concept_dim
    R = config.restarts
    _, step_ss, final_ss = np.random.SeedSequence(config.seed).spawn(3)

    if init_sets is not None:
        C = np.array(init_sets, dtype=np.float64)
        if C.shape != (R, k, dim):
            raise ShapeError(f"init_sets shape {C.shape}, expected {(R, k, dim)}")
        C = np.clip(C, lower, upper)
    else:
        C = np.clip(_init_restarts(config, k, dim, lower, upper), lower, upper)

    x = np.asarray(x, dtype=np.float64)
    lo, hi = _t_bounds(schedule, config.timestep_range)
    step_gen = np.random.default_rng(step_ss)
    live = list(range(R))
    ema = np.full(R, np.inf)
    paths = [C.copy()] if config.record_paths else None
    pruned_at: dict[int, int] = {}

    for n in range(config.n_step):
        t_n, eps_n = _draw_pair(step_gen, x.shape, lo, hi)
        lr = _lr_at(config, n)
        if config.nested_restarts:
            losses = np.empty(len(live))
            for i, r in enumerate(live):
                grads, loss = model.concept_grads(x, eps_n, t_n, C[r][None])
                C[r] = _apply_step(C[r], grads[0], lr, lower, upper, config.max_step)
                losses[i] = loss[0]
        else:
            grads, losses = model.concept_grads(x, eps_n, t_n, C[live])
            C[live] = _apply_step(C[live], grads, lr, lower, upper, config.max_step)
        decay = config.ema_decay
        for i, r in enumerate(live):
            ema[r] = losses[i] if not np.isfinite(ema[r]) else decay * ema[r] + (1 - decay) * losses[i]
        if paths is not None:
            paths.append(C.copy())
        if (config.prune_cadence and (n + 1) % config.prune_cadence == 0
                and n + 1 < config.n_step and len(live) > 1):
            n_drop = min(int(config.prune_fraction * len(live)), len(live) - 1)
            if n_drop > 0:
                # worst EMA goes first; ties drop the higher restart id
                order = sorted(live, key=lambda r: (ema[r], r))
                for r in order[len(live) - n_drop:]:
                    pruned_at[r] = n + 1
                live = order[:len(live) - n_drop]
                live.sort()

    fseed = int(final_seed) if final_seed is not None else _seq_int(final_ss)
    survivors = sorted(live)
    candidate_sets = [
        ConceptSet(tuple(coordinate_concept(C[r][j], lower, upper) for j in range(k)))
        for r in survivors
    ]
    table = denoising_error(model, x, candidate_sets, schedule, config.n_sample,
                            fseed, config.timestep_range,
                            batch_candidates=not config.nested_restarts)
    best = table.best()
    details = {
        "survivors": survivors,
        "pruned_at": {str(r): s for r, s in pruned_at.items()},
        "chosen_restart": survivors[best.config_id],
        "k": k,
    }
    if paths is not None:
        details["paths"] = [p.tolist() for p in paths]
    return InferenceReport(
        chosen=candidate_sets[best.config_id], table=table, seed=config.seed,
        restart_errors=tuple(e.error for e in table.entries),
        config=config, details=details,
        wall_clock=time.perf_counter() - started,
    )


def infer_concept_count(model, x, schedule: NoiseSchedule,
                        config: InferenceConfig, lower: float = 0.0,
                        upper: float = 1.0) -> InferenceReport:
    """Argmin over K in [k_min, k_max] of the best continuous-SGD error.

    The final-scoring sample list is shared across every K candidate so the
    per-K errors are directly comparable; ties pick the smallest K.
    """
    started = time.perf_counter()
    ks = list(range(config.k_min, config.k_max + 1))
    children = np.random.SeedSequence(config.seed).spawn(len(ks) + 1)
    fseed = _seq_int(children[-1])

    sub_reports: dict[int, InferenceReport] = {}
    entries = []
    for child, k in zip(children, ks):
        sub_cfg = replace(config, seed=_seq_int(child))
        rep = infer_continuous_sgd(model, x, k, schedule, sub_cfg,
                                   lower, upper, final_seed=fseed)
        sub_reports[k] = rep
        best = rep.table.best()
        entries.append(ErrorEntry(config_id=k, error=best.error, samples=best.samples))

    table = ErrorTable(
        entries=tuple(entries), seed=fseed, n_sample=config.n_sample,
        timesteps=sub_reports[ks[0]].table.timesteps,
    )
    best = table.best()
    k_hat = best.config_id
    return InferenceReport(
        chosen=sub_reports[k_hat].chosen, table=table, seed=config.seed,
        chosen_k=k_hat, config=config,
        details={
            "per_k_error": {str(k): sub_reports[k].table.best().error for k in ks},
            "per_k_chosen_restart": {str(k): sub_reports[k].details["chosen_restart"] for k in ks},
        },
        wall_clock=time.perf_counter() - started,
    )


def infer_discrete_relaxed(model, x, n_attrs: int, schedule: NoiseSchedule,
                           config: InferenceConfig,
                           init_levels=None) -> InferenceReport:
    """Gradient search over relaxed binary labels, thresholded at 0.5.

    Each attribute k carries a relaxed level l_k embedded as the pseudo
    one-hot block [l_k, 1-l_k]; levels are clamped into [0, 1] after every
    step and a final level below 0.5 maps to bit 0, otherwise bit 1.
    """
    started = time.perf_counter()
    if n_attrs < 1:
        raise ParameterError(f"n_attrs must be >= 1, got {n_attrs}")
    dim = 2 * n_attrs
    if model.concept_dim != dim:
        raise ShapeError(
            f"model concept dim {model.concept_dim} != {dim} for {n_attrs} attributes"
        )
    levels = np.full(n_attrs, 0.5) if init_levels is None else \
        np.clip(np.asarray(init_levels, dtype=np.float64), 0.0, 1.0)
    if levels.shape != (n_attrs,):
        raise ShapeError(f"init_levels shape {levels.shape}, expected ({n_attrs},)")

    def encode(lv):
        C = np.zeros((1, n_attrs, dim))
        for a in range(n_attrs):
            C[0, a, 2 * a] = lv[a]
            C[0, a, 2 * a + 1] = 1.0 - lv[a]
        return C

    x = np.asarray(x, dtype=np.float64)
    lo, hi = _t_bounds(schedule, config.timestep_range)
    _, step_ss, final_ss = np.random.SeedSequence(config.seed).spawn(3)
    step_gen = np.random.default_rng(step_ss)
    trace = [levels.copy()] if config.record_paths else None

    for n in range(config.n_step):
        t_n, eps_n = _draw_pair(step_gen, x.shape, lo, hi)
        grads, _ = model.concept_grads(x, eps_n, t_n, encode(levels))
        dl = np.array([grads[0, a, 2 * a] - grads[0, a, 2 * a + 1] for a in range(n_attrs)])
        levels = np.clip(levels - _lr_at(config, n) * dl, 0.0, 1.0)
        if trace is not None:
            trace.append(levels.copy())

    bits = [0 if lv < 0.5 else 1 for lv in levels]
    chosen = onehot_set(bits)
    fseed = _seq_int(final_ss)
    table = denoising_error(model, x, [chosen], schedule, config.n_sample,
                            fseed, config.timestep_range)
    details = {"levels": levels.tolist(), "bits": bits}
    if trace is not None:
        details["paths"] = [t.tolist() for t in trace]
    return InferenceReport(
        chosen=chosen, table=table, seed=config.seed, config=config,
        details=details, wall_clock=time.perf_counter() - started,
    )


def infer_weighted_composition(model, x, vocabulary, pick_count: int,
                               schedule: NoiseSchedule,
                               config: InferenceConfig) -> InferenceReport:
    """Gradient search over per-concept weights; returns the top picks.

    Weights start at pick_count / V; the step objective is the weighted
    composed residual ||eps - sum_k w_k model(x^t, t | c^k)||^2.  The
    pick_count concepts with the largest final weights win, ties going to
    the lowest index.
    """
    started = time.perf_counter()
    vectors = list(vocabulary.concepts) if isinstance(vocabulary, ConceptSet) else list(vocabulary)
    V = len(vectors)
    if V < 1:
        raise ParameterError("vocabulary must be non-empty")
    if not 1 <= pick_count <= V:
        raise ParameterError(f"pick_count {pick_count} outside [1, {V}]")
    rows = np.stack([np.asarray(v.values if isinstance(v, ConceptVector) else v,
                                dtype=np.float64) for v in vectors])

    x = np.asarray(x, dtype=np.float64)
    lo, hi = _t_bounds(schedule, config.timestep_range)
    _, step_ss, final_ss = np.random.SeedSequence(config.seed).spawn(3)
    step_gen = np.random.default_rng(step_ss)
    weights = np.full(V, pick_count / V)
    trace = [weights.copy()] if config.record_paths else None

    for n in range(config.n_step):
        t_n, eps_n = _draw_pair(step_gen, x.shape, lo, hi)
        terms = model.predict_terms(x, eps_n, t_n, rows)
        resid = eps_n.reshape(-1) - weights @ terms
        dw = -2.0 * (terms @ resid)
        weights = weights - _lr_at(config, n) * dw
        if trace is not None:
            trace.append(weights.copy())

    order = np.argsort(-weights, kind="stable")[:pick_count]
    picks = tuple(sorted(int(i) for i in order))
    chosen = ConceptSet(tuple(vectors[i] if isinstance(vectors[i], ConceptVector)
                              else ConceptVector(rows[i]) for i in picks))
    fseed = _seq_int(final_ss)
    table = denoising_error(model, x, [chosen], schedule, config.n_sample,
                            fseed, config.timestep_range)
    details = {"weights": weights.tolist(), "picks": list(picks)}
    if trace is not None:
        details["paths"] = [w.tolist() for w in trace]
    return InferenceReport(
        chosen=chosen, table=table, seed=config.seed, chosen_indices=picks,
        config=config, details=details,
        wall_clock=time.perf_counter() - started,
    )
