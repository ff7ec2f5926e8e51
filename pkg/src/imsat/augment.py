"""Augmentation functions for self-augmented training.

Local perturbations (random sphere, virtual adversarial) scale with a
per-point radius ``eps_i = alpha * (distance to the t-th neighbour)``.
Images can also be pushed through a random affine distortion.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import nn
from .errors import ConfigError, ShapeError
from .objectives import sat_loss, sat_loss_grad

log = logging.getLogger(__name__)

KINDS = ("rpt", "vat", "affine", "composite")


@dataclass(frozen=True)
class AffineRanges:
    scale: tuple = (0.8, 1.2)
    translate: tuple = (-0.4, 0.4)  # pixels
    rotate: tuple = (-10.0, 10.0)  # degrees
    shear: tuple = (-0.3, 0.3)


@dataclass(frozen=True)
class AffineParams:
    sx: float = 1.0
    sy: float = 1.0
    tx: float = 0.0
    ty: float = 0.0
    angle: float = 0.0  # degrees
    shear_x: float = 0.0
    shear_y: float = 0.0

    @classmethod
    def sample(cls, ranges, rng):
        sx, sy = rng.uniform(*ranges.scale, size=2)
        tx, ty = rng.uniform(*ranges.translate, size=2)
        angle = rng.uniform(*ranges.rotate)
        shx, shy = rng.uniform(*ranges.shear, size=2)
        return cls(sx, sy, tx, ty, angle, shx, shy)


@dataclass
class PerturbSpec:
    kind: str = "vat"
    alpha: float = 0.25
    t_neighbor: int = 10
    xi: float = 10.0
    power_iters: int = 1
    eps: float = None  # fixed radius for every point; overrides alpha * sigma_t
    affine: AffineRanges = field(default_factory=AffineRanges)
    image_shape: tuple = None
    components: list = field(default_factory=list)
    weights: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.kind == "composite":
            if not self.components:
                raise ConfigError("composite augmentation needs components")
            if self.weights is None:
                self.weights = tuple([1.0 / len(self.components)] * len(self.components))
            w = np.asarray(self.weights, dtype=float)
            if len(w) != len(self.components) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ConfigError("mixture weights must be non-negative and sum to 1")
        if self.kind == "affine" and self.image_shape is None:
            raise ConfigError("affine augmentation needs image_shape (height, width)")

    @property
    def needs_radius(self):
        if self.kind == "composite":
            return any(c.needs_radius for c in self.components)
        return self.kind in ("rpt", "vat") and self.eps is None


def _kth_neighbor_distance(data, t, chunk=256):
    n = data.shape[0]
    sq = np.einsum("ij,ij->i", data, data)
    n_cand = min(n - 1, 2 * t + 8)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = data[start:stop]
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * block @ data.T
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        cand = np.argpartition(d2, n_cand - 1, axis=1)[:, :n_cand]
        for row, idx in enumerate(cand):
            # exact distances for the short list; the Gram-trick values only rank
            exact = np.sqrt(np.sum((data[idx] - block[row]) ** 2, axis=1))
            out[start + row] = np.sort(exact)[t - 1]
    return out


def radius_table(data, alpha, t=10):
    """Per-point perturbation radius alpha * (distance to t-th nearest neighbour).

    Neighbours are found by exhaustive search, excluding the point itself.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("radius_table expects an (n, d) matrix")
    if t < 1 or X.shape[0] <= t:
        raise ConfigError(f"need more than t={t} points, got {X.shape[0]}")
    sigma = _kth_neighbor_distance(X, t)
    zero = int(np.sum(sigma == 0))
    if zero:
        log.warning("%d points have a zero radius (duplicates); their perturbation is the identity", zero)
    return alpha * sigma


def _unit_rows(d):
    norms = np.sqrt(np.sum(d * d, axis=1, keepdims=True))
    return d / np.where(norms > 0, norms, 1.0), norms[:, 0]


def rpt_sample(x_row, eps, rng):
    """x + r with r uniform on the sphere of radius ``eps``."""
    x_row = np.asarray(x_row, dtype=np.float64)
    if eps < 0:
        raise ConfigError("eps must be non-negative")
    return x_row + rpt_perturbation(x_row[None, :], np.array([eps]), rng)[0]


def rpt_perturbation(x, eps, rng):
    """Random-sphere perturbations for a batch, one radius per row."""
    d, _ = _unit_rows(rng.standard_normal(x.shape))
    return d * np.asarray(eps, dtype=np.float64).reshape(-1, 1)


def vat_direction(model, x, eps, xi=10.0, power_iters=1, rng=None, targets=None, mode="train"):
    """Approximate the SAT-maximizing perturbation of norm ``eps`` per row.

    Starting from a random unit direction, each power iteration takes the
    gradient of the SAT loss at ``x + xi * d`` with respect to the input and
    renormalizes it. The model is only read; batchnorm running statistics are
    not touched. Rows whose gradient vanishes keep their random direction.
    """
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, dtype=np.float64)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (x.shape[0],))
    if targets is None:
        targets, _ = nn.forward(model, x, mode=mode, update_stats=False)
    d0, _ = _unit_rows(rng.standard_normal(x.shape))
    d = d0
    for _ in range(power_iters):
        probs, cache = nn.forward(model, x + xi * d, mode=mode, update_stats=False)
        _, g_probs = sat_loss_grad(targets, probs)
        _, gx = nn.backward(model, cache, g_probs, param_grads=False)
        g, norms = _unit_rows(gx)
        dead = norms <= 0
        g[dead] = d0[dead]
        d = g
    return d * eps[:, None]


def _affine_matrix(params):
    """Forward map in (x, y) = (column, row) coordinates, about the centre."""
    th = math.radians(params.angle)
    scale = np.array([[params.sx, 0.0], [0.0, params.sy]])
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, params.shear_x], [params.shear_y, 1.0]])
    return scale @ rot @ shear


def affine_distort(image, ranges=None, rng=None, params=None):
    """Randomly scale, rotate, shear and translate a 2-D image.

    Bilinear resampling with zero padding; output has the input's shape.
    Pass ``params`` to apply a fixed transform instead of sampling one.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ConfigError(f"affine distortion needs an (H, W) image with H, W >= 2, got {img.shape}")
    if params is None:
        rng = np.random.default_rng() if rng is None else rng
        params = AffineParams.sample(ranges or AffineRanges(), rng)
    A = _affine_matrix(params)
    H, W = img.shape
    c = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    t = np.array([params.tx, params.ty])
    # output (x, y) -> input: A^-1 (p_out - c - t) + c, then swap to (row, col)
    Ainv = np.linalg.inv(A)
    offset_xy = c - Ainv @ (c + t)
    swap = np.array([[0, 1], [1, 0]])
    matrix = swap @ Ainv @ swap
    offset = swap @ offset_xy
    return ndimage.affine_transform(img, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def affine_batch(x, image_shape, rng, ranges=None):
    """Distort every flattened row of ``x`` independently."""
    if image_shape is None:
        raise ConfigError("affine augmentation needs image_shape (height, width)")
    H, W = image_shape
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != H * W:
        raise ConfigError(f"rows have {x.shape[1]} values but image shape is {H}x{W}")
    ranges = ranges or AffineRanges()
    out = np.empty_like(x)
    for i, row in enumerate(x):
        out[i] = affine_distort(row.reshape(H, W), ranges, rng).ravel()
    return out


def perturb(spec, model, x, eps, rng, targets=None):
    """Augmented copy of a batch for a single (non-composite) spec."""
    if spec.kind == "composite":
        raise ConfigError("perturb handles one component at a time")
    if spec.kind in ("rpt", "vat") and spec.eps is not None:
        eps = np.full(x.shape[0], spec.eps)
    if spec.kind == "rpt":
        return x + rpt_perturbation(x, eps, rng)
    if spec.kind == "vat":
        return x + vat_direction(model, x, eps, spec.xi, spec.power_iters, rng, targets)
    return affine_batch(x, spec.image_shape, rng, spec.affine)


def components(spec):
    """(weight, spec) pairs; a plain spec is a one-component mixture."""
    if spec.kind == "composite":
        return list(zip(spec.weights, spec.components))
    return [(1.0, spec)]


def composite_sat(model, x, spec, eps=None, rng=None, targets=None):
    """Weighted SAT loss over the augmentations in ``spec``.

    Targets default to a train-mode pass that leaves the running statistics
    alone.
    """
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, dtype=np.float64)
    if targets is None:
        targets, _ = nn.forward(model, x, mode="train", update_stats=False)
    total = 0.0
    for w, comp in components(spec):
        xa = perturb(comp, model, x, eps, rng, targets)
        probs, _ = nn.forward(model, xa, mode="train", update_stats=False)
        total += w * sat_loss(targets, probs)
    return total
