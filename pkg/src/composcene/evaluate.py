"""Scoring: optimal coordinate assignment and the perception metrics.

A predicted object counts as discovered when the MSE of its matched pair of
coordinates (mean over the two axes of squared error) is strictly below the
threshold, 0.002 by default.  Matching is the exact minimum-cost assignment,
not a greedy heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericError, ParameterError

PERCEPTION_MSE_THRESHOLD = 0.002
CORNER_SENTINEL = (1.0, 1.0)


@dataclass(frozen=True)
class Assignment:
    """Injective mapping predicted index -> ground-truth index."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float
    unmatched_pred: tuple[int, ...] = ()
    unmatched_true: tuple[int, ...] = ()


def hungarian_match(cost) -> Assignment:
    """Minimum-total-cost assignment of min(n, m) pairs; exact optimum."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise ParameterError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple((int(r), int(c)) for r, c in zip(rows, cols))
    total = float(cost[rows, cols].sum())
    matched_r = set(int(r) for r in rows)
    matched_c = set(int(c) for c in cols)
    return Assignment(
        pairs=pairs,
        total_cost=total,
        unmatched_pred=tuple(i for i in range(cost.shape[0]) if i not in matched_r),
        unmatched_true=tuple(j for j in range(cost.shape[1]) if j not in matched_c),
    )


def pair_mse(p, q) -> float:
    """Mean over axes of squared coordinate error (the 0.002 threshold's units)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(((p - q) ** 2).mean())


@dataclass
class SceneScore:
    scene_id: int
    n_true: int
    n_pred: int
    matched: int
    discovered: int
    mse_values: list[float]
    mean_mse: float


@dataclass
class MetricsReport:
    perception_rate: float
    estimation_error: float
    per_scene: list[SceneScore] = field(default_factory=list)
    multi_label_accuracy: float | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("scene_id,n_true,n_pred,matched,discovered,mean_mse\n")
            for s in self.per_scene:
                f.write(f"{s.scene_id},{s.n_true},{s.n_pred},{s.matched},"
                        f"{s.discovered},{s.mean_mse!r}\n")
            f.write(f"summary,perception_rate={self.perception_rate!r},"
                    f"estimation_error={self.estimation_error!r},,,\n")


def perception_metrics(predicted, truth,
                       threshold: float = PERCEPTION_MSE_THRESHOLD,
                       unmatched_penalty="corner") -> MetricsReport:
    """Per-scene optimal matching, perception rate and estimation error.

    predicted / truth: one (n_i, 2) coordinate array per scene.  An object is
    discovered when its matched MSE < threshold (strict).  Ground-truth
    objects left unmatched contribute the penalty: "corner" uses the distance
    to the (1, 1) sentinel, a float uses that value directly.
    """
    if len(predicted) != len(truth):
        raise ParameterError(
            f"{len(predicted)} predicted scenes vs {len(truth)} ground-truth scenes"
        )
    if len(truth) == 0:
        raise ParameterError("scene set is empty")

    total_objects = 0
    total_discovered = 0
    error_terms = []
    per_scene = []
    for sid, (pred, true) in enumerate(zip(predicted, truth)):
        pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
        true = np.asarray(true, dtype=np.float64).reshape(-1, 2)
        if true.shape[0] == 0:
            raise ParameterError(f"scene {sid} has no ground-truth objects")
        scene_mses = []
        discovered = 0
        if pred.shape[0] > 0:
            diff = pred[:, None, :] - true[None, :, :]
            cost = (diff ** 2).mean(axis=2)
            assign = hungarian_match(cost)
            for r, c in assign.pairs:
                mse = float(cost[r, c])
                scene_mses.append(mse)
                if mse < threshold:
                    discovered += 1
            unmatched_true = assign.unmatched_true
        else:
            unmatched_true = tuple(range(true.shape[0]))
        for j in unmatched_true:
            if unmatched_penalty == "corner":
                scene_mses.append(pair_mse(true[j], CORNER_SENTINEL))
            else:
                scene_mses.append(float(unmatched_penalty))
        total_objects += true.shape[0]
        total_discovered += discovered
        error_terms.extend(scene_mses)
        per_scene.append(SceneScore(
            scene_id=sid, n_true=true.shape[0], n_pred=pred.shape[0],
            matched=min(pred.shape[0], true.shape[0]), discovered=discovered,
            mse_values=scene_mses, mean_mse=float(np.mean(scene_mses)),
        ))
    return MetricsReport(
        perception_rate=total_discovered / total_objects,
        estimation_error=float(np.mean(error_terms)),
        per_scene=per_scene,
    )


def multi_label_accuracy(predicted_bits, true_bits) -> float:
    """Fraction of scenes whose whole attribute vector is exactly right."""
    if len(predicted_bits) != len(true_bits):
        raise ParameterError(
            f"{len(predicted_bits)} predictions vs {len(true_bits)} ground truths"
        )
    if len(true_bits) == 0:
        raise ParameterError("scene set is empty")
    hits = 0
    for sid, (p, t) in enumerate(zip(predicted_bits, true_bits)):
        p = [int(b) for b in p]
        t = [int(b) for b in t]
        if len(p) != len(t):
            raise ParameterError(f"scene {sid}: {len(p)} attributes vs {len(t)}")
        hits += int(p == t)
    return hits / len(true_bits)
