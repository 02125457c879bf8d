"""Depth-dependent PSF synthesis by geometric mask magnification.

A point source at depth z casts a shadow of the mask scaled by
(z - d)/z in mask coordinates, i.e. magnified by m(z) = z/(z - d) on
the sensor. The synthesis is a fixed linear map (bilinear resampling)
of the mask values, exposed with its adjoint so the mask optimizer can
backpropagate through it.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .geometry import GeometryError, magnification


@dataclass(frozen=True)
class MaskPattern:
    """One amplitude mask with signed values in [-1, 1]."""

    values: np.ndarray
    is_binary: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("mask must be a 2D array")
        if np.any(v < -1) or np.any(v > 1):
            raise ValueError("mask values must lie in [-1, 1]")
        if self.is_binary and not np.all(np.abs(v) == 1.0):
            raise ValueError("binary mask must contain only -1/+1")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MaskSet:
    """K mask patterns of identical shape."""

    patterns: tuple

    def __post_init__(self):
        pats = tuple(self.patterns)
        if len(pats) == 0:
            raise ValueError("mask set must contain at least one pattern")
        shape = pats[0].shape
        if any(p.shape != shape for p in pats):
            raise ValueError("all masks in a set must share one shape")
        object.__setattr__(self, "patterns", pats)

    @property
    def count(self):
        return len(self.patterns)

    @property
    def shape(self):
        return self.patterns[0].shape

    @property
    def is_binary(self):
        return all(p.is_binary for p in self.patterns)

    def as_array(self):
        return np.stack([p.values for p in self.patterns])

    def __len__(self):
        return self.count


def mask_from_grayscale(image_u8, binary=False):
    """Map an 8-bit grayscale image to a mask: 0 -> -1, 255 -> +1.

    With ``binary=True`` the image is thresholded at the midpoint first.
    """
    img = np.asarray(image_u8, dtype=float)
    if binary:
        vals = np.where(img >= 127.5, 1.0, -1.0)
        return MaskPattern(vals, is_binary=True)
    return MaskPattern(img / 127.5 - 1.0)


@lru_cache(maxsize=64)
def _interp_operator(geom, z_mm):
    """Sparse (sensor pixels) x (mask pixels) bilinear sampling matrix.

    Both grids use pixel-center coordinates with the origin at the
    geometric center. Samples falling outside the mask support get
    weight 0 (opaque surround).
    """
    if not np.isinf(z_mm) and z_mm <= geom.mask_distance_mm:
        raise GeometryError(f"z={z_mm}mm must exceed d={geom.mask_distance_mm}mm")
    sr, sc = geom.sensor_dims
    mr, mc = geom.mask_dims
    # demagnification factor (z - d)/z = 1/m(z); 1 for z = inf
    shrink = 1.0 / magnification(geom, z_mm)
    rows = np.arange(sr) - (sr - 1) / 2.0
    cols = np.arange(sc) - (sc - 1) / 2.0
    # sensor physical coords scaled back onto the mask, in mask-pixel units
    mrow = rows * geom.sensor_pitch_mm * shrink / geom.mask_pitch_mm + (mr - 1) / 2.0
    mcol = cols * geom.sensor_pitch_mm * shrink / geom.mask_pitch_mm + (mc - 1) / 2.0
    gr, gc = np.meshgrid(mrow, mcol, indexing="ij")
    r0 = np.floor(gr).astype(np.int64)
    c0 = np.floor(gc).astype(np.int64)
    fr = gr - r0
    fc = gc - c0

    sensor_idx = np.arange(sr * sc).reshape(sr, sc)
    data, rows_i, cols_i = [], [], []
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < mr) & (cc >= 0) & (cc < mc) & (w != 0)
        data.append(w[ok])
        rows_i.append(sensor_idx[ok])
        cols_i.append(rr[ok] * mc + cc[ok])
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows_i), np.concatenate(cols_i))),
        shape=(sr * sc, mr * mc),
    )
    return mat.tocsr()


def synthesize_psf(mask, geom, z_mm):
    """PSF on the sensor grid for one mask at depth z (mm)."""
    if mask.shape != geom.mask_dims:
        raise ValueError(f"mask shape {mask.shape} != mask_dims {geom.mask_dims}")
    A = _interp_operator(geom, float(z_mm))
    return (A @ mask.values.ravel()).reshape(geom.sensor_dims)


def psf_adjoint(sensor_grad, geom, z_mm):
    """Adjoint of synthesize_psf's linear map: sensor grid -> mask grid."""
    g = np.asarray(sensor_grad, dtype=float)
    if g.shape != geom.sensor_dims:
        raise ValueError(f"gradient shape {g.shape} != sensor_dims {geom.sensor_dims}")
    A = _interp_operator(geom, float(z_mm))
    return (A.T @ g.ravel()).reshape(geom.mask_dims)


@dataclass(frozen=True)
class PsfStack:
    """K x D x rows x cols stack of PSFs, one per (mask, depth plane)."""

    psfs: np.ndarray
    geometry: "CameraGeometry" = field(repr=False, default=None)
    depths: "DepthSampling" = field(repr=False, default=None)

    def __post_init__(self):
        p = np.asarray(self.psfs, dtype=float)
        if p.ndim != 4:
            raise ValueError("psf stack must be K x D x rows x cols")
        object.__setattr__(self, "psfs", p)

    @property
    def num_masks(self):
        return self.psfs.shape[0]

    @property
    def num_planes(self):
        return self.psfs.shape[1]

    @property
    def sensor_dims(self):
        return self.psfs.shape[2:]


def synthesize_stack(masks, geom, depths):
    """Synthesize the full K x D PSF stack for a mask set."""
    K = masks.count
    D = depths.count
    sr, sc = geom.sensor_dims
    out = np.empty((K, D, sr, sc))
    for i, z in enumerate(depths.depths_z_mm):
        A = _interp_operator(geom, float(z))
        flat = A @ masks.as_array().reshape(K, -1).T  # (sensor pixels, K)
        out[:, i] = flat.T.reshape(K, sr, sc)
    return PsfStack(psfs=out, geometry=geom, depths=depths)
