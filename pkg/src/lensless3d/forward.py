"""Forward simulation: multi-plane scene -> sensor measurements.

Each measurement is a sum over depth planes of the plane convolved with
its depth's PSF (Lambertian, transparent-plane model). Circular
convolution matches the solver's model exactly; linear_cropped mode
zero-pads, convolves linearly, and crops back to expose the boundary
artifacts a finite sensor produces.

FFT convention used throughout the package: forward transform
unnormalized, inverse carries 1/M (numpy default).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .psf import MaskPattern, MaskSet, synthesize_stack

MODES = ("circular", "linear_cropped")


@dataclass(frozen=True)
class PlaneStack:
    """D x C x rows x cols multi-plane image (C in {1, 3}).

    Scene inputs are nonnegative; reconstructions may dip below zero and
    set ``is_reconstruction=True`` to skip the nonnegativity check.
    """

    planes: np.ndarray
    depths: "DepthSampling" = field(repr=False, default=None)
    is_reconstruction: bool = False

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=float)
        if p.ndim == 3:  # D x rows x cols, implicit single channel
            p = p[:, None]
        if p.ndim != 4 or p.shape[1] not in (1, 3):
            raise ValueError("planes must be D x C x rows x cols with C in {1,3}")
        if not self.is_reconstruction and np.any(p < 0):
            raise ValueError("scene plane intensities must be nonnegative")
        object.__setattr__(self, "planes", p)

    @property
    def num_planes(self):
        return self.planes.shape[0]

    @property
    def num_channels(self):
        return self.planes.shape[1]

    @property
    def image_dims(self):
        return self.planes.shape[2:]


@dataclass(frozen=True)
class MeasurementSet:
    """K simulated sensor frames per color channel (K x C x rows x cols)."""

    frames: np.ndarray
    snr_db: float = np.inf
    mode: str = "circular"

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=float)
        if f.ndim == 3:
            f = f[:, None]
        if f.ndim != 4:
            raise ValueError("frames must be K x C x rows x cols")
        if not np.all(np.isfinite(f)):
            raise ValueError("measurement frames must be finite")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_channels(self):
        return self.frames.shape[1]


def simulate(scene, psfs, mode="circular", pad_limit=None):
    """Noise-free measurements: frames[k] = sum_z psf[k,z] (*) scene[z].

    ``mode='circular'`` uses FFT circular convolution (the solver's
    model); ``'linear_cropped'`` zero-pads by the PSF half-support and
    crops back to the sensor window.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if scene.num_planes != psfs.num_planes:
        raise ValueError(
            f"scene has {scene.num_planes} planes, psf stack {psfs.num_planes}")
    if scene.image_dims != psfs.sensor_dims:
        raise ValueError("scene grid must match the sensor grid")
    K, D = psfs.num_masks, psfs.num_planes
    C = scene.num_channels
    rows, cols = psfs.sensor_dims

    if mode == "circular":
        Phi = np.fft.fft2(psfs.psfs)                      # K x D x r x c
        L = np.fft.fft2(scene.planes)                     # D x C x r x c
        Y = np.einsum("kdxy,dcxy->kcxy", Phi, L)
        frames = np.fft.ifft2(Y).real
    else:
        half = (rows // 2, cols // 2)
        if pad_limit is not None and max(half) > pad_limit:
            raise ValueError(
                f"linear_cropped pad {max(half)} exceeds limit {pad_limit}")
        frames = np.zeros((K, C, rows, cols))
        for k in range(K):
            for z in range(D):
                for c in range(C):
                    frames[k, c] += fftconvolve(
                        scene.planes[z, c], psfs.psfs[k, z], mode="same")
    return MeasurementSet(frames=frames, snr_db=np.inf, mode=mode)


def add_noise(meas, snr_db, rng_seed=0):
    """Add i.i.d. Gaussian noise at the given SNR (dB).

    Noise power is set against the mean square over the whole
    measurement set, so relative frame brightness stays meaningful.
    snr_db = inf returns the input unchanged.
    """
    if not (np.isfinite(snr_db) or np.isposinf(snr_db)):
        raise ValueError("snr_db must be finite or +inf")
    if np.isposinf(snr_db):
        return meas
    signal_power = np.mean(meas.frames ** 2)
    sigma = np.sqrt(signal_power * 10.0 ** (-snr_db / 10.0))
    rng = np.random.default_rng(rng_seed)
    noisy = meas.frames + rng.normal(0.0, sigma, size=meas.frames.shape)
    return MeasurementSet(frames=noisy, snr_db=snr_db, mode=meas.mode)


def simulate_split_capture(scene, masks, geom, depths, snr_db=np.inf, rng_seed=0):
    """Emulate signed +-1 masks on nonnegative-transmission hardware.

    Each signed mask m is realized as two captures with transmissions
    (m+1)/2 and (1-m)/2; their difference equals the signed capture.
    Each capture receives an independent noise instance, so the result
    carries twice the single-capture noise variance.
    """
    if not masks.is_binary:
        raise ValueError("split capture requires binary +-1 masks")
    signed = masks.as_array()
    pos = MaskSet(tuple(MaskPattern((m + 1.0) / 2.0) for m in signed))
    neg = MaskSet(tuple(MaskPattern((1.0 - m) / 2.0) for m in signed))
    meas_pos = simulate(scene, synthesize_stack(pos, geom, depths))
    meas_neg = simulate(scene, synthesize_stack(neg, geom, depths))
    if np.isfinite(snr_db):
        # reference power of the signed capture, shared by both halves
        ref = MeasurementSet(frames=meas_pos.frames - meas_neg.frames)
        power = np.mean(ref.frames ** 2)
        sigma = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
        rng = np.random.default_rng(rng_seed)
        frames = (meas_pos.frames + rng.normal(0, sigma, meas_pos.frames.shape)
                  - meas_neg.frames - rng.normal(0, sigma, meas_neg.frames.shape))
    else:
        frames = meas_pos.frames - meas_neg.frames
    return MeasurementSet(frames=frames, snr_db=snr_db, mode="circular")
