"""Raw little-endian 3D volumes: loading, environments, and slab streaming.

A volume on disk is a pair ``<name>.raw`` + ``<name>.json``.  The sidecar
holds ``{"dims": [dx, dy, dz], "dtype": "uint8"|"uint16"}`` and the raw
stream is little-endian in raster order, x fastest and z slowest.  That
ordering maps onto a C-contiguous numpy array of shape ``(dz, dy, dx)``.
All positions in this API are 0-based ``(x, y, z)`` triples.

Large files are memory-mapped, so loading is O(1); actual reads happen
per slab or per environment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import VolumeFormatError

DTYPES = {"uint8": np.dtype("<u1"), "uint16": np.dtype("<u2")}
MAX_VALUES = {"uint8": 255, "uint16": 65535}


def _check_env_size(env_size: int) -> int:
    k = int(env_size)
    if k < 3 or k % 2 == 0:
        raise ValueError(f"environment size must be an odd integer >= 3, got {env_size}")
    return k


@dataclass(frozen=True)
class VolumeMeta:
    """Shape and sample format of a volume."""

    dims: tuple[int, int, int]
    dtype: str

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise VolumeFormatError(
                f"unsupported dtype {self.dtype!r}; expected one of {sorted(DTYPES)}"
            )
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise VolumeFormatError(f"dims must be three positive integers, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def voxel_count(self) -> int:
        dx, dy, dz = self.dims
        return dx * dy * dz

    @property
    def max_value(self) -> int:
        return MAX_VALUES[self.dtype]

    @property
    def bytes_per_voxel(self) -> int:
        return DTYPES[self.dtype].itemsize

    @property
    def nbytes(self) -> int:
        return self.voxel_count * self.bytes_per_voxel

    @property
    def shape_zyx(self) -> tuple[int, int, int]:
        dx, dy, dz = self.dims
        return (dz, dy, dx)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "dtype": self.dtype}


@dataclass(frozen=True)
class Environment:
    """A K^3 cube of voxel values around a center position.

    ``values`` is a ``(K, K, K)`` array indexed ``[z, y, x]``; flattening it
    in C order yields raster order.  ``complete`` is False when the window
    would leave the volume, in which case all values are zero.
    """

    size: int
    center: tuple[int, int, int]
    values: np.ndarray
    complete: bool


@dataclass(frozen=True)
class Slab:
    """A contiguous block of z-slices plus halo slices for window extraction.

    ``data`` has shape ``(halo_lo + (z_stop - z_start) + halo_hi, dy, dx)``;
    the owned region is ``data[halo_lo : halo_lo + thickness]``.
    """

    z_start: int
    z_stop: int
    halo_lo: int
    halo_hi: int
    data: np.ndarray

    @property
    def thickness(self) -> int:
        return self.z_stop - self.z_start

    @property
    def owned(self) -> np.ndarray:
        return self.data[self.halo_lo : self.halo_lo + self.thickness]


class Volume:
    """Immutable 3D grayscale volume with random and slab access."""

    def __init__(self, meta: VolumeMeta, data: np.ndarray):
        if data.shape != meta.shape_zyx:
            raise VolumeFormatError(
                f"data shape {data.shape} does not match dims {meta.dims} (expected zyx "
                f"shape {meta.shape_zyx})"
            )
        self.meta = meta
        self._data = data

    @classmethod
    def from_array(cls, data_zyx: np.ndarray) -> "Volume":
        """Wrap an in-memory ``(dz, dy, dx)`` uint8/uint16 array."""
        data = np.asarray(data_zyx)
        for name, dt in DTYPES.items():
            if data.dtype == dt:
                dz, dy, dx = data.shape
                return cls(VolumeMeta(dims=(dx, dy, dz), dtype=name), data)
        raise VolumeFormatError(f"unsupported array dtype {data.dtype}")

    @property
    def data(self) -> np.ndarray:
        """Read-only zyx array view (may be a memmap)."""
        return self._data

    def value_at(self, position) -> int:
        x, y, z = self._check_position(position)
        return int(self._data[z, y, x])

    def get_slice(self, axis: str, index: int) -> np.ndarray:
        """2D slice: axis 'z' -> (y, x), 'y' -> (z, x), 'x' -> (z, y)."""
        dx, dy, dz = self.meta.dims
        sizes = {"x": dx, "y": dy, "z": dz}
        if axis not in sizes:
            raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
        index = int(index)
        if not 0 <= index < sizes[axis]:
            raise IndexError(f"slice index {index} out of range for axis {axis} (size {sizes[axis]})")
        if axis == "z":
            return np.array(self._data[index])
        if axis == "y":
            return np.array(self._data[:, index, :])
        return np.array(self._data[:, :, index])

    def read_slab(self, z_start: int, z_stop: int, halo_lo: int, halo_hi: int) -> Slab:
        data = np.array(self._data[z_start - halo_lo : z_stop + halo_hi], copy=True)
        return Slab(z_start, z_stop, halo_lo, halo_hi, data)

    def _check_position(self, position) -> tuple[int, int, int]:
        pos = tuple(int(c) for c in position)
        if len(pos) != 3:
            raise ValueError(f"position must be an (x, y, z) triple, got {position!r}")
        if any(c < 0 or c >= d for c, d in zip(pos, self.meta.dims)):
            raise IndexError(f"position {pos} out of bounds for dims {self.meta.dims}")
        return pos


def _sidecar_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".raw":
        return p, p.with_suffix(".json")
    if p.suffix == ".json":
        return p.with_suffix(".raw"), p
    return p.with_suffix(".raw"), p.with_suffix(".json")


def load_volume(path) -> Volume:
    """Open a raw+sidecar volume read-only via memory mapping."""
    raw_path, json_path = _sidecar_paths(path)
    if not json_path.exists():
        raise VolumeFormatError(f"missing sidecar metadata file {json_path}")
    if not raw_path.exists():
        raise VolumeFormatError(f"missing raw voxel file {raw_path}")
    try:
        sidecar = json.loads(json_path.read_text())
        meta = VolumeMeta(dims=tuple(sidecar["dims"]), dtype=sidecar["dtype"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, VolumeFormatError):
            raise
        raise VolumeFormatError(f"ill-formed sidecar {json_path}: {exc}") from exc
    actual = raw_path.stat().st_size
    if actual != meta.nbytes:
        raise VolumeFormatError(
            f"size mismatch: dims {meta.dims} ({meta.dtype}) need {meta.nbytes} bytes, "
            f"file {raw_path} has {actual}"
        )
    data = np.memmap(raw_path, dtype=DTYPES[meta.dtype], mode="r", shape=meta.shape_zyx)
    return Volume(meta, data)


def write_volume(path, volume_or_array, dtype: str | None = None) -> tuple[Path, Path]:
    """Write raw bytes + sidecar; returns (raw_path, json_path)."""
    if isinstance(volume_or_array, Volume):
        vol = volume_or_array
    else:
        data = np.asarray(volume_or_array)
        if dtype is not None:
            data = data.astype(DTYPES[dtype])
        vol = Volume.from_array(data)
    raw_path, json_path = _sidecar_paths(path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(vol.data, dtype=DTYPES[vol.meta.dtype])
    raw_path.write_bytes(arr.tobytes())
    json_path.write_text(json.dumps(vol.meta.to_dict()) + "\n")
    return raw_path, json_path


def create_output_volume(path, meta: VolumeMeta) -> np.ndarray:
    """Create a writable zero-filled raw volume on disk, returning its memmap."""
    raw_path, json_path = _sidecar_paths(path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    out = np.memmap(raw_path, dtype=DTYPES[meta.dtype], mode="w+", shape=meta.shape_zyx)
    json_path.write_text(json.dumps(meta.to_dict()) + "\n")
    return out


def is_complete(dims: tuple[int, int, int], position, env_size: int) -> bool:
    h = env_size // 2
    return all(h <= c < d - h for c, d in zip(position, dims))


def extract_environment(volume: Volume, center, env_size: int) -> Environment:
    """Extract the K^3 environment around ``center``.

    Windows that would leave the volume are returned zero-filled with
    ``complete=False``; callers decide whether that is an error.
    """
    k = _check_env_size(env_size)
    pos = volume._check_position(center)
    h = k // 2
    if not is_complete(volume.meta.dims, pos, k):
        values = np.zeros((k, k, k), dtype=DTYPES[volume.meta.dtype])
        return Environment(size=k, center=pos, values=values, complete=False)
    x, y, z = pos
    values = np.array(
        volume.data[z - h : z + h + 1, y - h : y + h + 1, x - h : x + h + 1], copy=True
    )
    return Environment(size=k, center=pos, values=values, complete=True)


def slab_ranges(dz: int, slab_thickness: int, halo: int) -> list[tuple[int, int, int, int]]:
    """Partition [0, dz) into owned ranges with clipped halos.

    Returns (z_start, z_stop, halo_lo, halo_hi) tuples; owned ranges cover
    every slice exactly once.
    """
    if slab_thickness < 1:
        raise ValueError(f"slab_thickness must be >= 1, got {slab_thickness}")
    ranges = []
    for z0 in range(0, dz, slab_thickness):
        z1 = min(z0 + slab_thickness, dz)
        ranges.append((z0, z1, min(halo, z0), min(halo, dz - z1)))
    return ranges


def iter_slabs(volume: Volume, slab_thickness: int, env_size: int) -> Iterator[Slab]:
    """Stream the volume as slabs with floor(K/2) halo slices each side."""
    k = _check_env_size(env_size)
    dz = volume.meta.dims[2]
    for z0, z1, hlo, hhi in slab_ranges(dz, slab_thickness, k // 2):
        yield volume.read_slab(z0, z1, hlo, hhi)
