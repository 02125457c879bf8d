"""Camera geometry and depth-plane parameterization.

All distances are stored in millimeters; pixel pitches are given in
micrometers at the boundary and converted once. Depth planes are
parameterized by ``alpha = 1 - d/z``, which maps z in [d, inf] to [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

MM_PER_UM = 1e-3


class GeometryError(ValueError):
    """Invalid camera geometry or depth parameters."""


@dataclass(frozen=True)
class CameraGeometry:
    """Mask-to-sensor distance, pitches, and grid sizes.

    Parameters
    ----------
    mask_distance_mm : float
        Distance d between the mask plane and the sensor plane (mm).
    sensor_pitch_um, mask_pitch_um : float
        Pixel pitch of the sensor grid / feature pitch of the mask (um).
    sensor_dims, mask_dims : (int, int)
        (rows, cols) of the sensor and mask grids.
    """

    mask_distance_mm: float
    sensor_pitch_um: float
    mask_pitch_um: float
    sensor_dims: tuple
    mask_dims: tuple

    def __post_init__(self):
        if not self.mask_distance_mm > 0:
            raise GeometryError("mask_distance_mm must be > 0")
        if not (self.sensor_pitch_um > 0 and self.mask_pitch_um > 0):
            raise GeometryError("pitches must be > 0")
        for dims, name in ((self.sensor_dims, "sensor_dims"),
                           (self.mask_dims, "mask_dims")):
            if len(dims) != 2 or any(int(n) < 1 for n in dims):
                raise GeometryError(f"{name} must be two integers >= 1")
        object.__setattr__(self, "sensor_dims", (int(self.sensor_dims[0]),
                                                 int(self.sensor_dims[1])))
        object.__setattr__(self, "mask_dims", (int(self.mask_dims[0]),
                                               int(self.mask_dims[1])))

    @property
    def sensor_pitch_mm(self):
        return self.sensor_pitch_um * MM_PER_UM

    @property
    def mask_pitch_mm(self):
        return self.mask_pitch_um * MM_PER_UM


def alpha_from_z(geom, z_mm):
    """alpha = 1 - d/z for z > d; z = inf maps to alpha = 1."""
    d = geom.mask_distance_mm
    z = np.asarray(z_mm, dtype=float)
    if np.any(z[np.isfinite(z)] <= d):
        raise GeometryError(f"depth must exceed mask distance d={d}mm")
    return np.where(np.isinf(z), 1.0, 1.0 - d / z)


def z_from_alpha(geom, alpha):
    """Inverse of alpha_from_z; alpha = 1 maps to z = inf."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise GeometryError("alpha must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return np.where(a == 1.0, np.inf, geom.mask_distance_mm / (1.0 - a))


def magnification(geom, z_mm):
    """Geometric PSF magnification m(z) = z/(z - d); m -> 1 as z -> inf."""
    d = geom.mask_distance_mm
    if np.isinf(z_mm):
        return 1.0
    if z_mm <= d:
        raise GeometryError(f"z={z_mm}mm must exceed mask distance d={d}mm")
    return z_mm / (z_mm - d)


@dataclass(frozen=True)
class DepthSampling:
    """D depth planes, uniformly spaced in alpha = 1 - d/z.

    Index 0 is the nearest plane (smallest alpha / smallest z).
    """

    alphas: np.ndarray
    depths_z_mm: np.ndarray
    geometry: CameraGeometry = field(repr=False, default=None)

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        z = np.asarray(self.depths_z_mm, dtype=float)
        if a.size == 0 or a.size != z.size:
            raise GeometryError("alphas and depths must be nonempty, equal length")
        if a.size > 1 and not np.all(np.diff(a) > 0):
            raise GeometryError("alphas must be strictly increasing")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "depths_z_mm", z)

    @property
    def count(self):
        return int(self.alphas.size)

    def __len__(self):
        return self.count


def sample_depths(geom, z_min_mm, z_max_mm, count):
    """Sample `count` depth planes uniformly in alpha over [z_min, z_max].

    Endpoints are included; count == 1 returns the near plane z_min.
    z_max may be infinite (alpha = 1 exactly, far-field plane).
    """
    d = geom.mask_distance_mm
    if count < 1:
        raise GeometryError("depth plane count must be >= 1")
    if z_min_mm <= d:
        raise GeometryError(f"z_min={z_min_mm}mm must exceed d={d}mm")
    if z_max_mm < z_min_mm:
        raise GeometryError("z_max must be >= z_min")
    a_lo = float(alpha_from_z(geom, z_min_mm))
    a_hi = float(alpha_from_z(geom, z_max_mm))
    if count == 1:
        alphas = np.array([a_lo])
    else:
        alphas = np.linspace(a_lo, a_hi, count)
    z = z_from_alpha(geom, alphas)
    # pin the endpoints so round trips are exact
    z[0] = z_min_mm
    if count > 1:
        z[-1] = z_max_mm
    return DepthSampling(alphas=alphas, depths_z_mm=z, geometry=geom)
