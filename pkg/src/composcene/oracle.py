"""Closed-form Gaussian denoisers used to validate the inference algorithms.

`analytic_gaussian_denoiser` is the exact posterior mean of the noise given
x^t when the clean image is Normal(mu, sigma0^2 I):

    eps_hat = sqrt(1-ab) * (xt - sqrt(ab) * mu) / (ab * sigma0^2 + 1 - ab)

`GaussianBlobOracle` wraps that formula into a differentiable concept model
whose mean is background + sum of radial bumps centered at the concept
coordinates.  It implements the same interface as the trained network model
(residuals, concept_grads, predict_terms), so every inference routine can be
checked against a model with a known optimum.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError
from .schedule import NoiseSchedule
from .world import pixel_centers


def analytic_gaussian_denoiser(mu, sigma0: float, xt, t: int,
                               schedule: NoiseSchedule) -> np.ndarray:
    """Posterior-mean noise estimate under x0 ~ Normal(mu, sigma0^2 I)."""
    if sigma0 < 0:
        raise ParameterError(f"sigma0 must be >= 0, got {sigma0}")
    mu = np.asarray(mu, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if mu.shape != xt.shape:
        raise ShapeError(f"mu shape {mu.shape} does not match xt shape {xt.shape}")
    ab = schedule.alpha_bar(t)
    s, w = schedule.coeffs(t)
    denom = ab * sigma0 * sigma0 + (1.0 - ab)
    return w * (xt - s * mu) / denom


class GaussianBlobOracle:
    """Differentiable verification model with scene mean bg + sum of bumps.

    Per-concept terms split the observation evenly over the K composed
    summands, so the composed prediction is the exact posterior mean for the
    whole scene.  Residuals are evaluated in the algebraically reduced form

        r = (ab * sigma0^2 / D) * eps - (sqrt(ab) sqrt(1-ab) / D) * (x - mean)

    with D = ab * sigma0^2 + 1 - ab, which cancels the noising map exactly:
    at sigma0 = 0 with the true concepts the residual is identically zero in
    floating point, not merely small.
    """

    concept_dim = 2

    def __init__(self, image_shape, schedule: NoiseSchedule,
                 amplitude: float = 0.9, radius: float = 0.3,
                 background: float = 0.1, sigma0: float = 0.0):
        if sigma0 < 0:
            raise ParameterError(f"sigma0 must be >= 0, got {sigma0}")
        self.image_shape = tuple(int(v) for v in image_shape)
        h, w, c = self.image_shape
        if c != 1:
            raise ParameterError("the blob oracle is single-channel")
        self.schedule = schedule
        self.amplitude = float(amplitude)
        self.sigma = 0.5 * float(radius)
        self.background = float(background)
        self.sigma0 = float(sigma0)
        self._grid = pixel_centers(h, w)

    # -- scene construction ----------------------------------------------

    def _bumps(self, centers: np.ndarray) -> np.ndarray:
        """(K, n_pixels) bump images for centers (K, 2)."""
        dx = self._grid[None, :, 0] - centers[:, 0, None]
        dy = self._grid[None, :, 1] - centers[:, 1, None]
        return self.amplitude * np.exp(-(dx * dx + dy * dy) / (2.0 * self.sigma ** 2))

    def mean_flat(self, centers) -> np.ndarray:
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        return self.background + self._bumps(centers).sum(axis=0)

    def scene(self, centers) -> np.ndarray:
        """Clean test image for the given true centers, as (H, W, 1)."""
        return self.mean_flat(centers).reshape(self.image_shape)

    # -- model interface shared with NetworkModel -------------------------

    def _coeffs(self, t):
        ab = self.schedule.alpha_bar(t)
        s, w = self.schedule.coeffs(t)
        denom = ab * self.sigma0 ** 2 + (1.0 - ab)
        return ab * self.sigma0 ** 2 / denom, s * w / denom

    def _flat(self, a, name):
        a = np.asarray(a, dtype=np.float64)
        if a.size != self._grid.shape[0]:
            raise ShapeError(f"{name} has {a.size} entries, expected {self._grid.shape[0]}")
        return a.reshape(-1)

    def residuals(self, x, eps, t, sets: np.ndarray) -> np.ndarray:
        """(R, n_pixels) residuals eps - composed prediction per concept set."""
        x = self._flat(x, "x")
        e = self._flat(eps, "eps")
        a_eps, b_mis = self._coeffs(t)
        sets = np.asarray(sets, dtype=np.float64)
        R, K, _ = sets.shape
        means = self.background + self._bumps(sets.reshape(R * K, 2)).reshape(R, K, -1).sum(axis=1)
        return a_eps * e[None, :] - b_mis * (x[None, :] - means)

    def concept_grads(self, x, eps, t, sets: np.ndarray):
        """((R, K, 2) gradients of ||residual||^2, (R,) losses)."""
        sets = np.asarray(sets, dtype=np.float64)
        R, K, _ = sets.shape
        resid = self.residuals(x, eps, t, sets)
        losses = np.einsum("rn,rn->r", resid, resid)
        _, b_mis = self._coeffs(t)
        centers = sets.reshape(R * K, 2)
        bumps = self._bumps(centers)
        dx = self._grid[None, :, 0] - centers[:, 0, None]
        dy = self._grid[None, :, 1] - centers[:, 1, None]
        # d residual / d center = +b_mis * d mean / d center
        jx = bumps * dx / self.sigma ** 2
        jy = bumps * dy / self.sigma ** 2
        resid_rows = np.repeat(resid, K, axis=0)
        grads = np.empty((R * K, 2))
        grads[:, 0] = 2.0 * b_mis * np.einsum("kn,kn->k", jx, resid_rows)
        grads[:, 1] = 2.0 * b_mis * np.einsum("kn,kn->k", jy, resid_rows)
        return grads.reshape(R, K, 2), losses

    def predict_terms(self, x, eps, t, concept_rows: np.ndarray) -> np.ndarray:
        """(V, n_pixels) per-concept denoiser terms on the shared x^t."""
        x = self._flat(x, "x")
        e = self._flat(eps, "eps")
        centers = np.asarray(concept_rows, dtype=np.float64).reshape(-1, 2)
        V = centers.shape[0]
        ab = self.schedule.alpha_bar(t)
        s, w = self.schedule.coeffs(t)
        denom = ab * self.sigma0 ** 2 + (1.0 - ab)
        xt = s * x + w * e
        comp_means = self.background / V + self._bumps(centers)
        return w * (xt[None, :] / V - s * comp_means) / denom
