"""Scene ingestion, depth quantization, procedural scenes, file formats.

The tensor-stack file is the package's on-disk format for masks, PSF
stacks, measurements, and plane stacks:

    magic   8 bytes  b"L3DSTACK"
    version u32 LE   currently 1
    ndim    u32 LE
    dims    ndim x u32 LE
    dtype   u32 LE   1 = float32, 2 = float64
    payload row-major array bytes
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forward import PlaneStack
from .geometry import alpha_from_z

MAGIC = b"L3DSTACK"
VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS_BY_DTYPE = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class StackFormatError(ValueError):
    """Malformed tensor-stack file."""


class StackMagicError(StackFormatError):
    pass


class StackVersionError(StackFormatError):
    pass


class StackDtypeError(StackFormatError):
    pass


class StackDimensionError(StackFormatError):
    pass


def write_stack(path, tensor):
    """Serialize a float32/float64 tensor losslessly."""
    arr = np.asarray(tensor)
    if arr.dtype not in _TAGS_BY_DTYPE:
        arr = arr.astype(np.float64)
    if arr.size == 0:
        raise StackDimensionError("refusing to write an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    header = bytearray()
    header += MAGIC
    header += np.uint32(VERSION).tobytes()
    header += np.uint32(arr.ndim).tobytes()
    header += np.asarray(arr.shape, dtype="<u4").tobytes()
    header += np.uint32(_TAGS_BY_DTYPE[arr.dtype]).tobytes()
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_stack(path):
    """Read a tensor-stack file; inverse of write_stack."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise StackMagicError(f"{path}: bad magic, not a tensor-stack file")
    off = len(MAGIC)

    def u32():
        nonlocal off
        if len(raw) < off + 4:
            raise StackFormatError(f"{path}: truncated header")
        val = int(np.frombuffer(raw, "<u4", count=1, offset=off)[0])
        off += 4
        return val

    version = u32()
    if version != VERSION:
        raise StackVersionError(f"{path}: unsupported version {version}")
    ndim = u32()
    if ndim == 0 or ndim > 32:
        raise StackDimensionError(f"{path}: implausible ndim {ndim}")
    dims = tuple(u32() for _ in range(ndim))
    tag = u32()
    if tag not in _DTYPE_TAGS:
        raise StackDtypeError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[off:]
    if len(payload) != expected:
        raise StackDimensionError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


@dataclass(frozen=True)
class RgbdScene:
    """A color image plus a per-pixel depth map (mm or normalized)."""

    color: np.ndarray   # C x rows x cols, values in [0, 1]
    depth: np.ndarray   # rows x cols

    def __post_init__(self):
        c = np.asarray(self.color, dtype=float)
        if c.ndim == 2:
            c = c[None]
        d = np.asarray(self.depth, dtype=float)
        if c.ndim != 3 or c.shape[1:] != d.shape:
            raise ValueError("color must be C x rows x cols matching depth")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("depth must be finite and >= 0")
        object.__setattr__(self, "color", c)
        object.__setattr__(self, "depth", d)


def quantize_to_planes(scene, depths):
    """Split an RGB-D scene into a PlaneStack by nearest-alpha assignment.

    Scene depth is rescaled linearly onto [z_min, z_max]; each pixel
    goes to the plane whose alpha is nearest its own (ties to the nearer
    plane). Plane supports partition the image.
    """
    geom = depths.geometry
    D = depths.count
    dmin, dmax = scene.depth.min(), scene.depth.max()
    if dmax == dmin:
        if D > 1:
            warnings.warn("degenerate depth range; assigning all pixels to plane 0")
        idx = np.zeros(scene.depth.shape, dtype=int)
    else:
        z_lo = depths.depths_z_mm[0]
        z_hi = depths.depths_z_mm[-1]
        if np.isinf(z_hi):
            # map directly in alpha when the far plane sits at infinity
            a = depths.alphas[0] + (scene.depth - dmin) / (dmax - dmin) \
                * (depths.alphas[-1] - depths.alphas[0])
        else:
            z = z_lo + (scene.depth - dmin) / (dmax - dmin) * (z_hi - z_lo)
            a = alpha_from_z(geom, z)
        # argmin of |a - alphas|; ties break to the nearer (lower-index) plane
        dist = np.abs(a[..., None] - depths.alphas[None, None, :])
        idx = np.argmin(dist, axis=-1)
    C = scene.color.shape[0]
    rows, cols = scene.depth.shape
    planes = np.zeros((D, C, rows, cols))
    for i in range(D):
        planes[i] = scene.color * (idx == i)
    return PlaneStack(planes=planes, depths=depths), idx


def generate_procedural_scene(rng_seed, depths, image_dims,
                              min_rects=3, max_rects=10, channels=3):
    """Random textured rectangles spread across the depth planes.

    Deterministic given the seed; every plane receives at least one
    rectangle. Returns (PlaneStack, true plane-index map) where
    background pixels carry index -1 in the map.
    """
    rng = np.random.default_rng(rng_seed)
    D = depths.count
    rows, cols = image_dims
    n_rects = max(D, int(rng.integers(min_rects, max_rects + 1)))
    plane_of_rect = np.concatenate(
        [np.arange(D), rng.integers(0, D, size=n_rects - D)])
    rng.shuffle(plane_of_rect)

    planes = np.zeros((D, channels, rows, cols))
    index_map = np.full((rows, cols), -1, dtype=int)
    for p in plane_of_rect:
        h = int(rng.integers(max(2, rows // 8), max(3, rows // 2)))
        w = int(rng.integers(max(2, cols // 8), max(3, cols // 2)))
        r0 = int(rng.integers(0, rows - h + 1))
        c0 = int(rng.integers(0, cols - w + 1))
        base = rng.uniform(0.2, 1.0, size=channels)
        texture = rng.uniform(0.3, 1.0, size=(h, w))
        patch = base[:, None, None] * texture[None]
        # later rectangles occlude earlier ones within the 2D image
        index_map[r0:r0 + h, c0:c0 + w] = p
        planes[:, :, r0:r0 + h, c0:c0 + w] = 0.0
        planes[p, :, r0:r0 + h, c0:c0 + w] = patch
    # guarantee nonempty planes even after occlusion overwrites
    for p in range(D):
        if not np.any(index_map == p):
            r0 = int(rng.integers(0, rows - 1))
            c0 = int(rng.integers(0, cols - 1))
            index_map[r0:r0 + 2, c0:c0 + 2] = p
            planes[:, :, r0:r0 + 2, c0:c0 + 2] = 0.0
            planes[p, :, r0:r0 + 2, c0:c0 + 2] = rng.uniform(0.3, 1.0)
    return PlaneStack(planes=planes, depths=depths), index_map


def write_manifest(path, entries):
    """Plain key = value manifest accompanying multi-file outputs."""
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed manifest line {line!r}")
        k, v = line.split("=", 1)
        entries[k.strip()] = v.strip()
    return entries
