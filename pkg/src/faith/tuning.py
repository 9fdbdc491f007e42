"""Hyperparameter selection for (lambda, mu) by cross-validated grid search.

The mu grid is the fixed set {0.25, ..., 0.75}; for each mu a geometric
lambda path runs from eps_path * lambda_max(mu) up to
lambda_max(mu) = ||F^T T||_2 / mu.  Cells are scored by K-fold CV on the
seed rows (mean squared error between predicted and estimated threshold
offsets), the winner retrained on all rows.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePathError, ProjectionError, SolverError
from .features import FeatureConfig
from .solver import FaithModel, SolverParams, solve_faith

logger = logging.getLogger(__name__)

MU_GRID = (0.25, 0.33, 0.42, 0.50, 0.58, 0.67, 0.75)


@dataclass(frozen=True)
class HyperGrid:
    mu_values: tuple[float, ...] = MU_GRID
    k_max: int = 16
    eps_path: float = 1e-3

    def __post_init__(self):
        if self.k_max < 2:
            raise ValueError("lambda path needs at least 2 points")
        if not 0.0 < self.eps_path < 1.0:
            raise ValueError(f"eps_path must lie in (0, 1), got {self.eps_path}")
        if any(not 0.0 < m < 1.0 for m in self.mu_values):
            raise ValueError("every mu must lie strictly inside (0, 1)")
        object.__setattr__(self, "mu_values", tuple(float(m) for m in self.mu_values))

    @property
    def cell_count(self) -> int:
        return self.k_max * len(self.mu_values)


def lambda_max(mu: float, features, targets) -> float:
    """Largest meaningful regularization strength: ||F^T T||_2 / mu."""
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie strictly inside (0, 1), got {mu}")
    F = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    norm = float(np.linalg.norm(F.T @ T))
    if norm == 0.0:
        raise DegeneratePathError(
            "F^T targets is zero: features carry no signal about the targets, "
            "any lambda yields zero weights"
        )
    return norm / mu


def lambda_path(mu: float, features, targets, k_max: int = 16, eps_path: float = 1e-3) -> np.ndarray:
    """Geometric lambda sequence (increasing) with k_max points.

    Point k is eps * lmax * 10^((k / (k_max - 1)) log10(1/eps)), so the
    endpoints are exactly eps * lmax and lmax.
    """
    if k_max < 2:
        raise ValueError("lambda path needs at least 2 points")
    if not 0.0 < eps_path < 1.0:
        raise ValueError(f"eps_path must lie in (0, 1), got {eps_path}")
    lmax = lambda_max(mu, features, targets)
    k = np.arange(k_max, dtype=np.float64)
    return eps_path * lmax * 10.0 ** (k / (k_max - 1) * np.log10(1.0 / eps_path))


@dataclass
class CVCell:
    lam: float
    mu: float
    fold_scores: list[float] | None
    mean_score: float | None
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "fold_scores": self.fold_scores,
            "mean_score": self.mean_score,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class CVReport:
    cells: list[CVCell]
    chosen_lambda: float | None
    chosen_mu: float | None
    chosen_score: float | None
    fold_seed: int
    fold_count: int
    degenerate_path: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "chosen_lambda": self.chosen_lambda,
            "chosen_mu": self.chosen_mu,
            "chosen_score": self.chosen_score,
            "fold_seed": self.fold_seed,
            "fold_count": self.fold_count,
            "degenerate_path": self.degenerate_path,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CVReport":
        cells = [
            CVCell(
                lam=c["lambda"],
                mu=c["mu"],
                fold_scores=c["fold_scores"],
                mean_score=c["mean_score"],
                failed=c.get("failed", False),
                error=c.get("error"),
            )
            for c in d["cells"]
        ]
        return cls(
            cells=cells,
            chosen_lambda=d["chosen_lambda"],
            chosen_mu=d["chosen_mu"],
            chosen_score=d["chosen_score"],
            fold_seed=d["fold_seed"],
            fold_count=d["fold_count"],
            degenerate_path=d.get("degenerate_path", False),
            notes=list(d.get("notes", [])),
        )


def _fold_indices(m: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(m)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def select_best_cell(cells: list[CVCell]) -> CVCell:
    """Minimal mean score wins; exact ties go to larger lambda, then larger mu."""
    best = None
    for cell in cells:
        if cell.failed:
            continue
        key = (cell.mean_score, -cell.lam, -cell.mu)
        if best is None or key < best[0]:
            best = (key, cell)
    if best is None:
        raise SolverError("every grid cell failed; no hyperparameters selectable")
    return best[1]


def _score_cell(lam, mu, F, T, theta_g, w_max, fold_idx, solver_params) -> CVCell:
    all_idx = np.arange(F.shape[0])
    scores = []
    try:
        for val in fold_idx:
            train = np.setdiff1d(all_idx, val)
            model = solve_faith(
                F[train], T[train], theta_g, w_max, lam, mu, params=solver_params
            )
            resid = F[val] @ model.beta - T[val]
            scores.append(float(np.mean(resid**2)))
    except (SolverError, ProjectionError) as exc:
        logger.warning("grid cell (lambda=%.6g, mu=%.3g) failed: %s", lam, mu, exc)
        return CVCell(lam=float(lam), mu=float(mu), fold_scores=None, mean_score=None,
                      failed=True, error=str(exc))
    return CVCell(
        lam=float(lam),
        mu=float(mu),
        fold_scores=scores,
        mean_score=float(np.mean(scores)),
    )


def grid_search(
    features,
    targets,
    theta_g,
    w_max,
    grid: HyperGrid | None = None,
    folds: int | None = None,
    worker_count: int = 1,
    fold_seed: int = 0,
    solver_params: SolverParams | None = None,
    feature_config: FeatureConfig | None = None,
) -> tuple[FaithModel, CVReport]:
    """Score every grid cell by K-fold CV and retrain the winner on all rows.

    Ties on the mean score go to the larger lambda, then the larger mu.
    Cells whose solver fails are excluded (logged); if the lambda path is
    degenerate (F^T T = 0) the report is flagged and the returned model has
    zero weights.
    """
    F = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    m = F.shape[0]
    grid = grid or HyperGrid()
    if folds is None:
        folds = min(5, m)
    if folds < 2 or m < folds:
        raise ValueError(f"need M >= folds >= 2, got M={m}, folds={folds}")
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")

    try:
        cells_spec = [
            (float(lam), float(mu))
            for mu in grid.mu_values
            for lam in lambda_path(mu, F, T, grid.k_max, grid.eps_path)
        ]
    except DegeneratePathError as exc:
        model = solve_faith(F, T, theta_g, w_max, 1.0, 0.5, params=solver_params,
                            feature_config=feature_config)
        report = CVReport(
            cells=[],
            chosen_lambda=None,
            chosen_mu=None,
            chosen_score=None,
            fold_seed=fold_seed,
            fold_count=folds,
            degenerate_path=True,
            notes=[str(exc)],
        )
        model.diagnostics["degenerate_path"] = True
        return model, report

    fold_idx = _fold_indices(m, folds, fold_seed)
    if worker_count == 1:
        cells = [
            _score_cell(lam, mu, F, T, theta_g, w_max, fold_idx, solver_params)
            for lam, mu in cells_spec
        ]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            cells = list(
                pool.map(
                    lambda spec: _score_cell(
                        spec[0], spec[1], F, T, theta_g, w_max, fold_idx, solver_params
                    ),
                    cells_spec,
                )
            )

    chosen = select_best_cell(cells)

    model = solve_faith(
        F, T, theta_g, w_max, chosen.lam, chosen.mu,
        params=solver_params, feature_config=feature_config,
    )
    report = CVReport(
        cells=cells,
        chosen_lambda=chosen.lam,
        chosen_mu=chosen.mu,
        chosen_score=chosen.mean_score,
        fold_seed=fold_seed,
        fold_count=folds,
    )
    return model, report
