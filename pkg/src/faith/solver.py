"""Constrained elastic-net training of feature weights.

The trained weights minimize

    0.5 ||F b - T||^2 + lam * ((1 - mu)/2 ||b||^2 + mu ||b||_1)
    subject to  C b <= c,

where the polytope rows bound every training region's local threshold to
the representable gray range.  The smooth part is handled by explicit
gradient steps with constant step size 1/L; the l1 term by
soft-thresholding; the polytope indicator by iterative projection
(Hildreth's cyclic dual updates).

Composing the two proximal maps is not the proximal map of the sum, so a
plain forward-backward-backward iteration can converge to a non-optimal
fixed point (``composed_prox_fixed_point`` reproduces it for comparison).
``solve_faith`` instead runs the nested scheme: each outer gradient step
is followed by an inner Douglas-Rachford loop that evaluates the joint
prox of the l1 term plus the indicator to tolerance.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProjectionError, SolverError
from .features import FeatureConfig

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Polytope:
    """Halfspace intersection {x : C x <= b}."""

    C: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if C.ndim != 2 or b.ndim != 1 or C.shape[0] != b.size:
            raise ValueError(f"constraint shapes mismatch: C {C.shape}, b {b.shape}")
        row_norms = np.einsum("ij,ij->i", C, C)
        if np.any((row_norms == 0.0) & (b < 0.0)):
            raise ValueError("zero constraint row with negative bound makes the polytope empty")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_features(cls, features: np.ndarray, theta_g: float, w_max: float) -> "Polytope":
        """Bound theta_g + F b to [0, w_max] on every training row."""
        F = np.asarray(features, dtype=np.float64)
        if not 0.0 <= theta_g <= w_max:
            raise ValueError(f"theta_g={theta_g} outside [0, {w_max}]")
        m = F.shape[0]
        C = np.vstack([-F, F])
        b = np.concatenate([np.full(m, float(theta_g)), np.full(m, float(w_max - theta_g))])
        return cls(C=C, b=b)

    @property
    def dimension(self) -> int:
        return self.C.shape[1]

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at x (<= 0 means feasible)."""
        return float(np.max(self.C @ x - self.b))


@dataclass(frozen=True)
class SolverParams:
    """Tolerances and iteration caps for the nested scheme.

    Both convergence checks are absolute on iterate displacement; hitting a
    cap raises, it never silently truncates.
    """

    eps_outer: float = 1e-8
    eps_inner: float = 1e-8
    proj_tol: float = 1e-10
    max_outer: int = 100_000
    max_inner: int = 10_000
    max_proj: int = 100_000
    record_objective: bool = False


@dataclass
class FaithModel:
    """A trained local-threshold model: theta(U) = theta_g + beta . F(U)."""

    theta_g: float
    w_max: int
    lam: float
    mu: float
    beta: np.ndarray
    feature_config: FeatureConfig | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def env_size(self) -> int:
        if self.feature_config is None:
            raise ValueError("model has no feature configuration attached")
        return self.feature_config.env_size

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "theta_g": float(self.theta_g),
            "w_max": int(self.w_max),
            "lambda": float(self.lam),
            "mu": float(self.mu),
            "features": list(self.feature_config.features) if self.feature_config else None,
            "env_size": self.feature_config.env_size if self.feature_config else None,
            "beta": [float(v) for v in np.asarray(self.beta).ravel()],
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaithModel":
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        cfg = None
        if d.get("features") is not None:
            cfg = FeatureConfig(tuple(d["features"]), int(d["env_size"]), int(d["w_max"]))
        return cls(
            theta_g=float(d["theta_g"]),
            w_max=int(d["w_max"]),
            lam=float(d["lambda"]),
            mu=float(d["mu"]),
            beta=np.asarray(d["beta"], dtype=np.float64),
            feature_config=cfg,
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def save(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return p

    @classmethod
    def load(cls, path) -> "FaithModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    """Componentwise sgn(x) * max(0, |x| - threshold)."""
    if threshold < 0:
        raise ValueError(f"soft threshold must be nonnegative, got {threshold}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(0.0, np.abs(x) - threshold)


def grad_f(beta, features, targets, lam, mu) -> np.ndarray:
    """Gradient of the smooth objective part: F^T (F b - T) + lam (1-mu) b."""
    F = np.asarray(features, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if F.ndim != 2 or b.shape != (F.shape[1],) or t.shape != (F.shape[0],):
        raise ValueError(
            f"shape mismatch: F {F.shape}, beta {np.shape(beta)}, targets {np.shape(targets)}"
        )
    return F.T @ (F @ b - t) + lam * (1.0 - mu) * b


def elastic_net_objective(beta, features, targets, lam, mu) -> float:
    """Data-fit plus elastic-net penalty (the indicator term excluded)."""
    F = np.asarray(features, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    resid = F @ b - t
    return float(
        0.5 * resid @ resid
        + lam * ((1.0 - mu) / 2.0 * (b @ b) + mu * np.sum(np.abs(b)))
    )


def _power_iteration_max_eig(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix via power iteration."""
    d = A.shape[0]
    v = np.full(d, 1.0 / math.sqrt(d))
    eig = 0.0
    for _ in range(max_iter):
        w = A @ v
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        new = float(v @ w) / float(v @ v)
        v = w / norm_w
        if abs(new - eig) <= tol * max(1.0, abs(new)):
            return new
        eig = new
    return eig


def lipschitz_step(features, lam, mu) -> tuple[float, float]:
    """Gradient Lipschitz constant L = eig_max(F^T F) + lam (1 - mu) and step 1/L."""
    _check_reg(lam, mu)
    F = np.asarray(features, dtype=np.float64)
    L = _power_iteration_max_eig(F.T @ F) + lam * (1.0 - mu)
    return L, 1.0 / L


def _check_reg(lam, mu):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie strictly inside (0, 1), got {mu}")


def project_polytope(x, polytope: Polytope, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Project x onto the polytope by cyclic dual coordinate updates.

    Maintains z = x - C^T lam with clamped nonnegative multipliers; stops
    when both the worst constraint violation and the largest dual change of
    a full cycle drop below ``tol``.  Zero rows with nonnegative bound are
    vacuous and skipped.
    """
    C, b = polytope.C, polytope.b
    z = np.array(x, dtype=np.float64)
    if z.shape != (polytope.dimension,):
        raise ValueError(f"point shape {z.shape} does not match polytope dimension")
    row_sq = np.einsum("ij,ij->i", C, C)
    rows = np.nonzero(row_sq > 0.0)[0]
    if rows.size == 0:
        return z
    lam = np.zeros(b.size)
    violation = polytope.violation(z)
    if violation <= tol:
        return z
    for _ in range(max_iter):
        max_change = 0.0
        for i in rows:
            resid = float(C[i] @ z - b[i])
            new_lam = lam[i] + resid / row_sq[i]
            if new_lam < 0.0:
                new_lam = 0.0
            delta = new_lam - lam[i]
            if delta != 0.0:
                z -= delta * C[i]
                lam[i] = new_lam
                if abs(delta) > max_change:
                    max_change = abs(delta)
        violation = float(np.max(C @ z - b))
        if violation <= tol and max_change <= tol:
            return z
    raise ProjectionError(
        f"projection did not reach feasibility within {max_iter} cycles "
        f"(violation {violation:.3e})",
        last_iterate=z,
        violation=violation,
    )


def _default_polytope(features, theta_g, w_max, polytope):
    if polytope is not None:
        return polytope
    return Polytope.from_features(features, theta_g, w_max)


def solve_faith(
    features,
    targets,
    theta_g,
    w_max,
    lam,
    mu,
    params: SolverParams | None = None,
    polytope: Polytope | None = None,
    feature_config: FeatureConfig | None = None,
) -> FaithModel:
    """Train feature weights by the nested proximal iteration.

    Outer loop: x = b - delta grad, z = 2 S(x) - x; inner loop alternates
    the polytope projection of (z + x)/2 with a reflected soft-threshold
    update of z until z is stationary; the projected point becomes the next
    iterate.  Outer convergence is ||b_next - b||_2 < eps_outer.

    Raises SolverError when an iteration cap is exceeded or an iterate goes
    non-finite; the returned weights are always feasible up to tolerance.
    """
    _check_reg(lam, mu)
    F = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 1:
        raise ValueError(f"feature matrix must be 2D with at least one row, got {F.shape}")
    if T.shape != (F.shape[0],):
        raise ValueError(f"targets shape {T.shape} does not match {F.shape[0]} rows")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(T))):
        raise SolverError("non-finite entries in features or targets")
    if not 0.0 <= theta_g <= w_max:
        raise ValueError(f"theta_g={theta_g} outside [0, {w_max}]")
    if F.shape[0] > 1 and np.unique(F, axis=0).shape[0] < F.shape[0]:
        warnings.warn(
            "duplicate feature rows in training set; identical regions reweight the fit",
            stacklevel=2,
        )
    p = params or SolverParams()
    poly = _default_polytope(F, theta_g, w_max, polytope)
    L, delta = lipschitz_step(F, lam, mu)
    shrink = delta * lam * mu

    beta = np.zeros(F.shape[1])
    trace = [elastic_net_objective(beta, F, T, lam, mu)] if p.record_objective else None
    inner_total = 0
    outer_used = 0
    converged = False
    for outer in range(1, p.max_outer + 1):
        outer_used = outer
        x = beta - delta * grad_f(beta, F, T, lam, mu)
        z = 2.0 * soft_threshold(x, shrink) - x
        z_hat = None
        inner_converged = False
        for _ in range(p.max_inner):
            z_hat = project_polytope((z + x) / 2.0, poly, tol=p.proj_tol, max_iter=p.max_proj)
            z_next = z + soft_threshold(2.0 * z_hat - z, shrink) - z_hat
            step = float(np.linalg.norm(z_next - z))
            z = z_next
            inner_total += 1
            if step < p.eps_inner:
                inner_converged = True
                break
        if not inner_converged:
            raise SolverError(
                f"inner proximal loop exceeded {p.max_inner} iterations",
                diagnostics={"outer_iterations": outer, "inner_iterations": inner_total},
            )
        if not np.all(np.isfinite(z_hat)):
            raise SolverError(
                "non-finite iterate encountered",
                diagnostics={"outer_iterations": outer, "beta": beta},
            )
        step_outer = float(np.linalg.norm(z_hat - beta))
        beta = z_hat
        if trace is not None:
            trace.append(elastic_net_objective(beta, F, T, lam, mu))
        if step_outer < p.eps_outer:
            converged = True
            break
    if not converged:
        raise SolverError(
            f"outer loop exceeded {p.max_outer} iterations (last step {step_outer:.3e})",
            diagnostics={
                "outer_iterations": outer_used,
                "inner_iterations": inner_total,
                "beta": beta,
            },
        )

    violation = poly.violation(beta)
    bound_scale = float(np.max(np.abs(poly.b))) if poly.b.size else 0.0
    if violation > 1e-8 * (1.0 + bound_scale):
        raise SolverError(
            f"returned weights violate constraints by {violation:.3e}",
            diagnostics={"beta": beta},
        )
    diagnostics = {
        "outer_iterations": outer_used,
        "inner_iterations": inner_total,
        "final_step": step_outer,
        "objective": elastic_net_objective(beta, F, T, lam, mu),
        "feasibility_violation": violation,
        "lipschitz": L,
        "step_size": delta,
    }
    if trace is not None:
        diagnostics["objective_trace"] = trace
    return FaithModel(
        theta_g=float(theta_g),
        w_max=int(w_max),
        lam=float(lam),
        mu=float(mu),
        beta=beta,
        feature_config=feature_config,
        diagnostics=diagnostics,
    )


def composed_prox_fixed_point(
    features,
    targets,
    theta_g,
    w_max,
    lam,
    mu,
    polytope: Polytope | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    proj_tol: float = 1e-10,
    max_proj: int = 100_000,
) -> np.ndarray:
    """Fixed point of b -> P(S(b - delta grad)); comparison path, not the solver.

    Composing projection after soft-thresholding is only the joint prox in
    special cases, so this fixed point may differ from the minimizer.
    """
    _check_reg(lam, mu)
    F = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    poly = _default_polytope(F, theta_g, w_max, polytope)
    _, delta = lipschitz_step(F, lam, mu)
    shrink = delta * lam * mu
    beta = np.zeros(F.shape[1])
    for _ in range(max_iter):
        nxt = project_polytope(
            soft_threshold(beta - delta * grad_f(beta, F, T, lam, mu), shrink),
            poly,
            tol=proj_tol,
            max_iter=max_proj,
        )
        if float(np.linalg.norm(nxt - beta)) < tol:
            return nxt
        beta = nxt
    raise SolverError(f"composed iteration did not become stationary in {max_iter} steps")
