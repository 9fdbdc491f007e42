"""Per-environment feature computation.

The default feature pair describes how strongly a local environment
resembles a plane or a line, via the eigenvalues of the gradient
structure tensor accumulated over the window:

* gradients: central differences inside the window, one-sided at the
  window faces (``np.gradient`` semantics), entirely within the K^3 cube;
* tensor: sum of gradient outer products, a symmetric PSD 3x3 matrix;
* eigenvalues l1 >= l2 >= l3 >= 0, computed by the closed-form
  trigonometric solution of the characteristic polynomial;
* ``planarity`` = (l1 - l2) / l1 (sheet-like intensity -> gradients
  concentrate along the normal -> one dominant eigenvalue);
* ``linearity`` = (l2 - l3) / l1 (tube-like intensity -> gradients span
  the two directions orthogonal to the line).

Both lie in [0, 1] and are zero for (numerically) structureless windows.
Grayscale statistics (``mean``, ``stddev``, normalized by the maximum
representable value) are registered as optional extras.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .volume import Environment, _check_env_size

DEFAULT_FEATURES = ("linearity", "planarity")

# Relative floor under which the structure tensor counts as zero; scaled by
# the largest tensor magnitude a window of this size and bit depth can reach.
_DEGENERATE_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureConfig:
    """Ordered feature selection bound to an environment size and bit depth.

    The order is part of the trained model: weight i belongs to feature i.
    """

    features: tuple[str, ...]
    env_size: int
    max_value: int

    def __post_init__(self):
        names = tuple(str(n) for n in self.features)
        if not names:
            raise ValueError("at least one feature must be selected")
        unknown = [n for n in names if n not in REGISTRY]
        if unknown:
            raise ValueError(f"unknown feature(s) {unknown}; registered: {sorted(REGISTRY)}")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")
        object.__setattr__(self, "features", names)
        object.__setattr__(self, "env_size", _check_env_size(self.env_size))
        if self.max_value <= 0:
            raise ValueError(f"max_value must be positive, got {self.max_value}")
        object.__setattr__(self, "max_value", int(self.max_value))

    @property
    def dimension(self) -> int:
        return len(self.features)

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "env_size": self.env_size,
            "max_value": self.max_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(tuple(d["features"]), int(d["env_size"]), int(d["max_value"]))


def _sym3_eigvals(a00, a11, a22, a01, a02, a12) -> np.ndarray:
    """Batched eigenvalues of symmetric 3x3 matrices, sorted descending.

    Trigonometric solution of the characteristic polynomial; branch-light
    and allocation-bounded, suitable for one call per voxel window.
    """
    q = (a00 + a11 + a22) / 3.0
    b00 = a00 - q
    b11 = a11 - q
    b22 = a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12)
    p = np.sqrt(p2 / 6.0)
    safe = p > 0.0
    pinv = np.where(safe, 1.0 / np.where(safe, p, 1.0), 0.0)
    c00 = b00 * pinv
    c11 = b11 * pinv
    c22 = b22 * pinv
    c01 = a01 * pinv
    c02 = a02 * pinv
    c12 = a12 * pinv
    half_det = 0.5 * (
        c00 * (c11 * c22 - c12 * c12)
        - c01 * (c01 * c22 - c12 * c02)
        + c02 * (c01 * c12 - c11 * c02)
    )
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    eigs = np.stack([e1, e2, e3], axis=-1)
    # p == 0 means the matrix is a multiple of the identity
    eigs = np.where(np.asarray(safe)[..., None], eigs, np.stack([q, q, q], axis=-1))
    return np.maximum(eigs, 0.0)


def structure_tensor_eigs(windows: np.ndarray) -> np.ndarray:
    """Eigenvalues (descending) of the structure tensor of each window.

    ``windows`` has shape (n, K, K, K); returns (n, 3).
    """
    w = np.asarray(windows, dtype=np.float64)
    gz, gy, gx = np.gradient(w, axis=(1, 2, 3))
    n = w.shape[0]
    gx = gx.reshape(n, -1)
    gy = gy.reshape(n, -1)
    gz = gz.reshape(n, -1)
    axx = np.einsum("ni,ni->n", gx, gx)
    ayy = np.einsum("ni,ni->n", gy, gy)
    azz = np.einsum("ni,ni->n", gz, gz)
    axy = np.einsum("ni,ni->n", gx, gy)
    axz = np.einsum("ni,ni->n", gx, gz)
    ayz = np.einsum("ni,ni->n", gy, gz)
    return _sym3_eigvals(axx, ayy, azz, axy, axz, ayz)


class _Batch:
    """Shared intermediates for one chunk of windows."""

    def __init__(self, windows: np.ndarray, cfg: FeatureConfig):
        self.windows = np.asarray(windows, dtype=np.float64)
        self.cfg = cfg
        self._eigs = None

    @property
    def eigs(self) -> np.ndarray:
        if self._eigs is None:
            self._eigs = structure_tensor_eigs(self.windows)
        return self._eigs

    def _shape_ratio(self, numerator: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        floor = _DEGENERATE_EIG_FLOOR * (cfg.max_value**2 * cfg.env_size**3)
        lam1 = self.eigs[:, 0]
        live = lam1 >= floor
        out = np.zeros_like(lam1)
        np.divide(numerator, lam1, out=out, where=live)
        # eigenvalue ordering can wobble by float noise; ratios are [0, 1] by definition
        return np.clip(out, 0.0, 1.0)


def _feat_linearity(batch: _Batch) -> np.ndarray:
    e = batch.eigs
    return batch._shape_ratio(e[:, 1] - e[:, 2])


def _feat_planarity(batch: _Batch) -> np.ndarray:
    e = batch.eigs
    return batch._shape_ratio(e[:, 0] - e[:, 1])


def _feat_mean(batch: _Batch) -> np.ndarray:
    return batch.windows.mean(axis=(1, 2, 3)) / batch.cfg.max_value


def _feat_stddev(batch: _Batch) -> np.ndarray:
    return batch.windows.std(axis=(1, 2, 3)) / batch.cfg.max_value


REGISTRY = {
    "linearity": _feat_linearity,
    "planarity": _feat_planarity,
    "mean": _feat_mean,
    "stddev": _feat_stddev,
}


def compute_feature_batch(windows: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Feature matrix (n, d) for a stack of K^3 windows (n, K, K, K)."""
    w = np.asarray(windows)
    if w.ndim != 4 or w.shape[1:] != (cfg.env_size,) * 3:
        raise ValueError(
            f"window stack shape {w.shape} does not match K={cfg.env_size} windows"
        )
    batch = _Batch(w, cfg)
    cols = [REGISTRY[name](batch) for name in cfg.features]
    out = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite feature value computed")
    return out


def compute_features(env: Environment, cfg: FeatureConfig) -> np.ndarray:
    """Feature vector of a single environment (shape (d,))."""
    if env.size != cfg.env_size:
        raise ValueError(
            f"environment size {env.size} does not match configured K={cfg.env_size}"
        )
    return compute_feature_batch(env.values[np.newaxis], cfg)[0]


def build_feature_matrix(envs: Sequence[Environment], cfg: FeatureConfig) -> np.ndarray:
    """Stack feature vectors of the given environments into an (M, d) matrix."""
    if len(envs) == 0:
        raise ValueError("need at least one environment")
    return np.stack([compute_features(env, cfg) for env in envs])
