"""Shared test utilities: independent oracles and synthetic volumes.

Everything here deliberately avoids the production code paths it is used
to check: the threshold oracle evaluates the split objective bin by bin,
the reference minimizer is cvxpy, eigenvalues come from numpy's dense
solver, and the structure tensor is assembled with explicit loops.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- thresholds
def naive_mce_threshold(counts, origin=0):
    """Direct per-candidate evaluation of the cross-entropy split objective.

    Scans every integer candidate from the smallest occupied gray value to
    one past the largest, recomputing both side sums from scratch for each
    candidate; ties go to the smallest candidate.
    """
    counts = np.asarray(counts, dtype=np.float64)
    gray = origin + np.arange(counts.size, dtype=np.float64)
    occupied = np.nonzero(counts)[0]
    assert occupied.size > 0
    lo, hi = int(occupied[0]), int(occupied[-1])
    weighted = gray * counts
    best_t, best_val = None, math.inf
    for t in range(lo, hi + 2):
        total = 0.0
        for sl in (slice(0, t), slice(t, counts.size)):
            mass = float(weighted[sl].sum())
            cnt = float(counts[sl].sum())
            if cnt == 0.0 or mass == 0.0:
                continue
            mu = mass / cnt
            g = gray[sl]
            w = weighted[sl]
            keep = (w > 0) & (g > 0)
            total += float(np.sum(w[keep] * np.log(g[keep] / mu)))
        if total < best_val:
            best_val, best_t = total, t
    return origin + best_t


# ------------------------------------------------------------- linear algebra
def dense_structure_tensor_eigs(window):
    """Eigenvalues (desc) of the window's structure tensor via eigvalsh."""
    w = np.asarray(window, dtype=np.float64)
    gz, gy, gx = np.gradient(w)
    tensor = np.zeros((3, 3))
    for ga, a in ((gx, 0), (gy, 1), (gz, 2)):
        for gb, b in ((gx, 0), (gy, 1), (gz, 2)):
            tensor[a, b] = float(np.sum(ga * gb))
    return np.linalg.eigvalsh(tensor)[::-1]


# --------------------------------------------------------------- optimization
def eq_objective(beta, F, T, lam, mu):
    beta = np.asarray(beta, dtype=np.float64)
    r = F @ beta - T
    return float(0.5 * r @ r + lam * ((1 - mu) / 2 * beta @ beta + mu * np.abs(beta).sum()))


def cvxpy_reference(F, T, lam, mu, C, b):
    """High-precision reference minimizer for the constrained elastic net."""
    import cvxpy as cp

    d = F.shape[1]
    x = cp.Variable(d)
    objective = (
        0.5 * cp.sum_squares(F @ x - T)
        + lam * ((1 - mu) / 2 * cp.sum_squares(x) + mu * cp.norm1(x))
    )
    constraints = [C @ x <= b] if C is not None and len(b) else []
    prob = cp.Problem(cp.Minimize(objective), constraints)
    try:
        prob.solve(solver=cp.CLARABEL)
    except (cp.SolverError, Exception):
        prob.solve(solver=cp.ECOS, abstol=1e-10, reltol=1e-10)
    assert prob.status in ("optimal", "optimal_inaccurate"), prob.status
    return np.asarray(x.value, dtype=np.float64)


def grid_refine_minimizer(fun, center, radius, rounds=12, points=41):
    """Brute-force 2D minimizer by repeated grid refinement around the best cell."""
    c = np.asarray(center, dtype=np.float64)
    r = float(radius)
    best = None
    for _ in range(rounds):
        xs = np.linspace(c[0] - r, c[0] + r, points)
        ys = np.linspace(c[1] - r, c[1] + r, points)
        vals = np.array([[fun((x, y)) for y in ys] for x in xs])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best = np.array([xs[i], ys[j]])
        c, r = best, r * (2.5 / (points - 1))
    return best


# --------------------------------------------------------------------- phantom
PHANTOM_BACKGROUND = 50
PHANTOM_PLANE_VALUE = 110
PHANTOM_BLOB_VALUE = 200
PHANTOM_NOISE_SIGMA = 5.0
PHANTOM_THETA_G = 150.0


def make_phantom(size=64, seed=1234):
    """Blob + faint plane + Gaussian noise test volume with known truth.

    The bright blob clears the global threshold, the plane does not; the
    plane spans the whole x/y extent at one z slice.  Returns a dict with
    the uint8 array (zyx), ground-truth masks, suggested seeds (on the
    plane), and the global threshold.
    """
    rng = np.random.default_rng(seed)
    vol = np.full((size, size, size), PHANTOM_BACKGROUND, dtype=np.float64)

    plane_z = size // 3
    plane_mask = np.zeros((size, size, size), dtype=bool)
    plane_mask[plane_z] = True
    vol[plane_mask] = PHANTOM_PLANE_VALUE

    cz, cy, cx = (2 * size) // 3, (2 * size) // 3, (2 * size) // 3
    radius = max(3, size // 6)
    zz, yy, xx = np.mgrid[0:size, 0:size, 0:size]
    blob_mask = (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    vol[blob_mask] = PHANTOM_BLOB_VALUE

    vol += rng.normal(0.0, PHANTOM_NOISE_SIGMA, size=vol.shape)
    data = np.clip(np.rint(vol), 0, 255).astype(np.uint8)

    margin = 8
    coords = np.linspace(margin, size - 1 - margin, 5).round().astype(int)
    seeds = [(int(x), int(y), int(plane_z)) for y in coords for x in coords]

    return {
        "data": data,
        "plane_mask": plane_mask,
        "blob_mask": blob_mask,
        "background_mask": ~(plane_mask | blob_mask),
        "plane_z": plane_z,
        "seeds": seeds,
        "theta_g": PHANTOM_THETA_G,
    }
