"""End-to-end pipeline: seed training and streaming volume segmentation.

Segmentation walks the volume once, slab by slab.  Every voxel that admits
a complete K^3 environment gets a per-voxel threshold
theta = theta_g + beta . F(window) and emits 1 when its value reaches it;
voxels in the floor(K/2) border shell emit 0.  Window features are exactly
the training-time features: each window is processed independently
(gradients one-sided at its own faces), so the output does not depend on
slab thickness, worker count, or chunking.

Computed thresholds are not clamped to [0, W]; validity is only enforced
on the training rows.  Out-of-range occurrences are counted in the stats.
"""
from __future__ import annotations

import threading
import time
import uuid
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BorderSeedError, JobCancelled
from .features import FeatureConfig, compute_feature_batch, compute_features
from .mce import build_targets
from .solver import FaithModel, SolverParams
from .tuning import CVReport, HyperGrid, grid_search
from .volume import (
    Environment,
    Volume,
    VolumeMeta,
    create_output_volume,
    extract_environment,
    is_complete,
    slab_ranges,
)

# Window chunks are sized so the float64 window stack stays near 2 MiB;
# with gradients and temporaries the whole scratch stays below this bound,
# independent of volume size and slab thickness.
CHUNK_WINDOW_BYTES = 2 << 20
SCRATCH_BYTES_BOUND = 8 * CHUNK_WINDOW_BYTES


def chunk_size(env_size: int) -> int:
    return max(128, CHUNK_WINDOW_BYTES // (env_size**3 * 8))


@dataclass
class SeedSet:
    """User-selected voxel positions from which the model is trained."""

    positions: list[tuple[int, int, int]]
    env_size: int
    annotations: dict | None = None

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("seed set must contain at least one position")
        self.positions = [tuple(int(c) for c in p) for p in self.positions]

    @property
    def count(self) -> int:
        return len(self.positions)

    def border_positions(self, volume: Volume) -> list[tuple[int, int, int]]:
        dims = volume.meta.dims
        return [p for p in self.positions if not is_complete(dims, p, self.env_size)]

    def validate(self, volume: Volume) -> None:
        for p in self.positions:
            volume._check_position(p)
        borders = self.border_positions(volume)
        if borders:
            raise BorderSeedError(borders, self.env_size)
        if self.count > volume.meta.voxel_count / 100:
            warnings.warn(
                f"{self.count} seeds on {volume.meta.voxel_count} voxels; seed sets are "
                "expected to be much smaller than the volume",
                stacklevel=2,
            )


def train_from_seeds(
    volume: Volume,
    seeds: SeedSet,
    cfg: FeatureConfig,
    theta_g: float,
    grid: HyperGrid | None = None,
    folds: int | None = None,
    fold_seed: int = 0,
    worker_count: int = 1,
    solver_params: SolverParams | None = None,
) -> tuple[FaithModel, CVReport]:
    """Extract seed environments, estimate targets, tune, and train."""
    w = volume.meta.max_value
    if not 0.0 <= theta_g <= w:
        raise ValueError(f"theta_g={theta_g} outside [0, {w}]")
    if cfg.env_size != seeds.env_size:
        raise ValueError(
            f"feature config K={cfg.env_size} does not match seed set K={seeds.env_size}"
        )
    if cfg.max_value != w:
        raise ValueError(
            f"feature config max_value={cfg.max_value} does not match volume W={w}"
        )
    seeds.validate(volume)
    envs = [extract_environment(volume, p, seeds.env_size) for p in seeds.positions]
    F = np.stack([compute_features(env, cfg) for env in envs])
    targets = build_targets(envs, theta_g)
    model, report = grid_search(
        F,
        targets.values,
        theta_g,
        w,
        grid=grid,
        folds=folds,
        worker_count=worker_count,
        fold_seed=fold_seed,
        solver_params=solver_params,
        feature_config=cfg,
    )
    model.diagnostics.update(
        seed_count=seeds.count,
        per_seed_theta_star=[float(v) for v in targets.theta_stars],
        degenerate_seed_histograms=[bool(v) for v in targets.degenerate],
    )
    return model, report


def local_threshold(model: FaithModel, env: Environment) -> float:
    """theta_g + beta . F(U) for one environment; deliberately unclamped."""
    if model.feature_config is None:
        raise ValueError("model has no feature configuration attached")
    if env.size != model.env_size:
        raise ValueError(f"environment size {env.size} does not match model K={model.env_size}")
    f = compute_features(env, model.feature_config)
    return float(model.theta_g + f @ model.beta)


class _Tally:
    """Thread-shared accumulation of segmentation statistics."""

    def __init__(self, total_slices: int, progress=None):
        self.lock = threading.Lock()
        self.total_slices = total_slices
        self.slices_done = 0
        self.voxels_set = 0
        self.interior_voxels = 0
        self.out_of_range = 0
        self.threshold_min = np.inf
        self.threshold_max = -np.inf
        self.max_slab_bytes = 0
        self.progress = progress

    def update(self, slices, voxels_set, interior, oor, tmin, tmax, slab_bytes):
        with self.lock:
            self.slices_done += slices
            self.voxels_set += voxels_set
            self.interior_voxels += interior
            self.out_of_range += oor
            self.threshold_min = min(self.threshold_min, tmin)
            self.threshold_max = max(self.threshold_max, tmax)
            self.max_slab_bytes = max(self.max_slab_bytes, slab_bytes)
            if self.progress is not None:
                self.progress(self.slices_done / self.total_slices)


def _classify_windows(win2d, ys, xs, cfg, beta, theta_g, w_max):
    """Decide all (ys, xs) window positions of one z-layer of windows.

    ``win2d`` is a (ny, nx, K, K, K) sliding-window view; returns the bit
    array plus (out_of_range, tmin, tmax) threshold diagnostics.
    """
    h = cfg.env_size // 2
    n = ys.size
    bits = np.empty(n, dtype=np.uint8)
    oor = 0
    tmin, tmax = np.inf, -np.inf
    step = chunk_size(cfg.env_size)
    for start in range(0, n, step):
        sel = slice(start, min(start + step, n))
        w = win2d[ys[sel], xs[sel]]
        feats = compute_feature_batch(w, cfg)
        thresholds = theta_g + feats @ beta
        centers = w[:, h, h, h]
        bits[sel] = centers >= thresholds
        oor += int(np.count_nonzero((thresholds < 0) | (thresholds > w_max)))
        if thresholds.size:
            tmin = min(tmin, float(thresholds.min()))
            tmax = max(tmax, float(thresholds.max()))
    return bits, oor, tmin, tmax


def segment(
    volume: Volume,
    model: FaithModel,
    out_path,
    slab_thickness: int = 16,
    workers: int = 1,
    progress=None,
    cancel: threading.Event | None = None,
) -> dict:
    """Stream the volume through the model and write a {0,1} uint8 volume.

    Returns statistics including voxel counts, threshold range, wall time,
    and the largest slab buffer held.  Output is bit-identical for every
    slab_thickness and worker count.
    """
    if model.feature_config is None:
        raise ValueError("model has no feature configuration attached")
    cfg = model.feature_config
    if model.w_max != volume.meta.max_value:
        raise ValueError(
            f"model was trained for W={model.w_max}, volume has W={volume.meta.max_value}"
        )
    k = cfg.env_size
    h = k // 2
    dx, dy, dz = volume.meta.dims
    beta = np.asarray(model.beta, dtype=np.float64)
    theta_g = float(model.theta_g)

    started = time.perf_counter()
    out_meta = VolumeMeta(dims=volume.meta.dims, dtype="uint8")
    out = create_output_volume(out_path, out_meta)
    tally = _Tally(total_slices=dz, progress=progress)

    has_interior = dy >= k and dx >= k and dz >= k
    if has_interior:
        ys, xs = np.meshgrid(
            np.arange(dy - k + 1), np.arange(dx - k + 1), indexing="ij"
        )
        ys, xs = ys.ravel(), xs.ravel()
    else:
        ys = xs = None

    def process(ranges):
        z0, z1, hlo, hhi = ranges
        if cancel is not None and cancel.is_set():
            raise JobCancelled("segmentation cancelled")
        slab = volume.read_slab(z0, z1, hlo, hhi)
        block = np.zeros((z1 - z0, dy, dx), dtype=np.uint8)
        oor = 0
        interior = 0
        tmin, tmax = np.inf, -np.inf
        zi0, zi1 = max(z0, h), min(z1, dz - h)
        if has_interior and zi0 < zi1:
            windows = sliding_window_view(slab.data, (k, k, k))
            for z in range(zi0, zi1):
                wz = z - (z0 - hlo) - h
                bits, o, lo_t, hi_t = _classify_windows(
                    windows[wz], ys, xs, cfg, beta, theta_g, model.w_max
                )
                block[z - z0, ys + h, xs + h] = bits
                oor += o
                interior += bits.size
                tmin = min(tmin, lo_t)
                tmax = max(tmax, hi_t)
        out[z0:z1] = block
        tally.update(
            z1 - z0,
            int(block.sum(dtype=np.int64)),
            interior,
            oor,
            tmin,
            tmax,
            slab.data.nbytes,
        )

    ranges = slab_ranges(dz, slab_thickness, h)
    if workers <= 1:
        for r in ranges:
            process(r)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for _ in pool.map(process, ranges):
                pass
    out.flush()

    return {
        "dims": list(volume.meta.dims),
        "voxels_set": tally.voxels_set,
        "interior_voxels": tally.interior_voxels,
        "border_voxels": volume.meta.voxel_count - tally.interior_voxels,
        "out_of_range_thresholds": tally.out_of_range,
        "threshold_min": tally.threshold_min if np.isfinite(tally.threshold_min) else None,
        "threshold_max": tally.threshold_max if np.isfinite(tally.threshold_max) else None,
        "seconds": time.perf_counter() - started,
        "slab_thickness": slab_thickness,
        "workers": workers,
        "max_slab_bytes": tally.max_slab_bytes,
    }


def global_threshold_volume(volume: Volume, threshold: float, out_path,
                            slab_thickness: int = 64) -> dict:
    """Plain pointwise binarization (value >= threshold) over every voxel."""
    dx, dy, dz = volume.meta.dims
    started = time.perf_counter()
    out = create_output_volume(out_path, VolumeMeta(dims=volume.meta.dims, dtype="uint8"))
    voxels_set = 0
    for z0, z1, _, _ in slab_ranges(dz, slab_thickness, 0):
        block = (volume.data[z0:z1] >= threshold).astype(np.uint8)
        out[z0:z1] = block
        voxels_set += int(block.sum(dtype=np.int64))
    out.flush()
    return {
        "dims": list(volume.meta.dims),
        "voxels_set": voxels_set,
        "threshold": float(threshold),
        "seconds": time.perf_counter() - started,
    }


def decide_slice(volume: Volume, model: FaithModel, axis: str, index: int):
    """Per-voxel decisions on one slice: (faith_mask, global_mask) uint8 arrays.

    Orientation matches Volume.get_slice: z -> (y, x), y -> (z, x),
    x -> (z, y).  The faith mask is zero wherever the environment is
    incomplete; the global mask is the plain comparison on every voxel.
    """
    cfg = model.feature_config
    if cfg is None:
        raise ValueError("model has no feature configuration attached")
    k = cfg.env_size
    h = k // 2
    dx, dy, dz = volume.meta.dims
    base = volume.get_slice(axis, index)
    global_mask = (base >= model.theta_g).astype(np.uint8)
    faith = np.zeros_like(global_mask)

    sizes = {"x": dx, "y": dy, "z": dz}
    if not (h <= index < sizes[axis] - h) or any(d < k for d in (dx, dy, dz)):
        return faith, global_mask

    data = volume.data
    if axis == "z":
        sub = np.array(data[index - h : index + h + 1])
        win = sliding_window_view(sub, (k, k, k))[0]
        n0, n1 = dy - k + 1, dx - k + 1
    elif axis == "y":
        sub = np.array(data[:, index - h : index + h + 1, :])
        win = sliding_window_view(sub, (k, k, k))[:, 0]
        n0, n1 = dz - k + 1, dx - k + 1
    else:
        sub = np.array(data[:, :, index - h : index + h + 1])
        win = sliding_window_view(sub, (k, k, k))[:, :, 0]
        n0, n1 = dz - k + 1, dy - k + 1

    a, b = np.meshgrid(np.arange(n0), np.arange(n1), indexing="ij")
    a, b = a.ravel(), b.ravel()
    bits, _, _, _ = _classify_windows(
        win, a, b, cfg, np.asarray(model.beta, dtype=np.float64), float(model.theta_g),
        model.w_max,
    )
    faith[a + h, b + h] = bits
    return faith, global_mask


class SegmentationJob:
    """Asynchronously runnable segmentation with monotone progress.

    Status moves only forward: pending -> running -> done/failed/cancelled.
    Progress reaches 1.0 exactly when the status is done.
    """

    def __init__(self, volume: Volume, model: FaithModel, out_path,
                 slab_thickness: int = 16, workers: int = 1):
        self.id = uuid.uuid4().hex
        self.volume = volume
        self.model = model
        self.out_path = str(out_path)
        self.slab_thickness = slab_thickness
        self.workers = workers
        self.status = "pending"
        self.progress = 0.0
        self.stats: dict | None = None
        self.error: str | None = None
        self._cancel = threading.Event()
        self._lock = threading.Lock()

    def _on_progress(self, fraction: float):
        with self._lock:
            self.progress = max(self.progress, min(float(fraction), 1.0))

    def run(self):
        with self._lock:
            if self.status != "pending":
                raise RuntimeError(f"job {self.id} already {self.status}")
            self.status = "running"
        try:
            stats = segment(
                self.volume,
                self.model,
                self.out_path,
                slab_thickness=self.slab_thickness,
                workers=self.workers,
                progress=self._on_progress,
                cancel=self._cancel,
            )
            with self._lock:
                self.stats = stats
                self.progress = 1.0
                self.status = "done"
        except JobCancelled:
            with self._lock:
                self.status = "cancelled"
        except Exception as exc:  # surfaced through the job record
            with self._lock:
                self.error = str(exc)
                self.status = "failed"

    def cancel(self):
        self._cancel.set()

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "id": self.id,
                "status": self.status,
                "progress": self.progress,
                "stats": self.stats,
                "error": self.error,
                "out_path": self.out_path,
            }
