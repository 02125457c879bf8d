"""Multi-plane reconstruction from coded measurements.

Circular convolution diagonalizes in the Fourier domain, so the one
large MK x MD regularized least-squares problem splits into M
independent K x D problems, one per spatial frequency:

    L_w = (Phi_w^H Phi_w + tau_w I)^{-1} Phi_w^H Y_w

Three routes are provided: the batched per-frequency closed-form solver
(the production path), a dense full-system solver used purely as a test
oracle, and the single-plane matched-filter baseline that focuses one
depth at a time.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .forward import PlaneStack

TAU_RULES = ("constant", "frobenius_scaled")
SOLVERS = ("closed_form", "conjugate_gradient")

# frequencies are processed in fixed-size chunks so numerical results do
# not depend on the worker count
_FREQ_CHUNK = 4096

_IMAG_RESIDUE_TOL = 1e-6
_DENSE_UNKNOWN_CAP = 4096


class SingularSystemError(np.linalg.LinAlgError):
    """Rank-deficient per-frequency system with tau = 0."""

    def __init__(self, freq_index, shape=None):
        if shape is not None:
            freq_index = tuple(int(v) for v in np.unravel_index(freq_index, shape))
        super().__init__(
            f"singular system at frequency {freq_index} with tau = 0; "
            "increase tau0 or improve the mask set")
        self.freq_index = freq_index


@dataclass(frozen=True)
class ReconConfig:
    """Regularization and solver choices for the separable solver."""

    tau0: float = 1e-6
    tau_rule: str = "constant"
    solver: str = "closed_form"
    cg_tol: float = 1e-12
    cg_max_iter: int = 200
    workers: int = 1

    def __post_init__(self):
        if self.tau0 < 0:
            raise ValueError("tau0 must be >= 0")
        if self.tau_rule not in TAU_RULES:
            raise ValueError(f"tau_rule must be one of {TAU_RULES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be > 0")


def psf_spectra(psfs):
    """2D FFT of the PSF stack, flattened to (M, K, D)."""
    K, D = psfs.num_masks, psfs.num_planes
    Phi = np.fft.fft2(psfs.psfs).reshape(K, D, -1)
    return np.moveaxis(Phi, -1, 0)  # (M, K, D)


def tau_per_frequency(Phi, tau0, tau_rule):
    """Per-frequency regularization weight.

    'constant' uses tau0 everywhere; 'frobenius_scaled' sets
    tau_w = tau0 * ||Phi_w||_F^2 / (K * D) so tau0 is dimensionless.
    """
    M, K, D = Phi.shape
    if tau_rule == "constant":
        return np.full(M, float(tau0))
    if tau_rule == "frobenius_scaled":
        return tau0 * np.sum(np.abs(Phi) ** 2, axis=(1, 2)) / (K * D)
    raise ValueError(f"unknown tau rule {tau_rule!r}")


def _solve_chunk(Phi, Y, tau, solver, cg_tol, cg_max_iter, offset=0):
    """Ridge-solve min ||Phi X - Y||^2 + tau ||X||^2 per frequency.

    Phi: (m, K, D), Y: (m, K, C), tau: (m,). Returns X: (m, D, C),
    the solution of (Phi^H Phi + tau I) X = Phi^H Y at each frequency.

    The closed-form path factors the augmented matrix [Phi; sqrt(tau) I]
    with QR instead of forming the gram matrix, which would square the
    condition number at frequencies where the mask spectra nearly vanish.
    """
    m, K, D = Phi.shape
    C = Y.shape[2]
    if solver == "closed_form":
        sq = np.sqrt(tau)
        aug = np.concatenate(
            [Phi, sq[:, None, None] * np.eye(D)[None]], axis=1)
        rhs = np.concatenate([Y, np.zeros((m, D, C))], axis=1)
        Q, R = np.linalg.qr(aug)
        diag = np.abs(R[:, np.arange(D), np.arange(D)])
        scale = np.linalg.norm(aug, axis=1).max(axis=1)
        deficient = (tau == 0) & (diag.min(axis=1) <=
                                  D * np.finfo(float).eps * scale)
        if np.any(deficient):
            raise SingularSystemError(offset + int(np.argmax(deficient)))
        return np.linalg.solve(R, np.conj(np.swapaxes(Q, 1, 2)) @ rhs)
    PhiH = np.conj(np.swapaxes(Phi, 1, 2))          # (m, D, K)
    A = PhiH @ Phi
    A[:, np.arange(D), np.arange(D)] += tau[:, None]
    return _batched_cg(A, PhiH @ Y, cg_tol, cg_max_iter)


def _batched_cg(A, b, tol, max_iter):
    """Conjugate gradients on a batch of small Hermitian PD systems."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(np.abs(r) ** 2, axis=1, keepdims=True)
    b_norm = np.sqrt(np.sum(np.abs(b) ** 2, axis=1, keepdims=True))
    thresh = tol * np.maximum(b_norm, np.finfo(float).tiny)
    for _ in range(max_iter):
        Ap = A @ p
        denom = np.sum(np.conj(p) * Ap, axis=1, keepdims=True).real
        alpha = np.where(denom > 0, rs / np.maximum(denom, np.finfo(float).tiny), 0)
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = np.sum(np.abs(r) ** 2, axis=1, keepdims=True)
        if np.all(np.sqrt(rs_new) <= thresh):
            break
        p = r + (rs_new / np.maximum(rs, np.finfo(float).tiny)) * p
        rs = rs_new
    return x


def _to_real_planes(X_freq, D, C, rows, cols):
    """Inverse-transform per-plane spectra and drop the imaginary residue."""
    spect = np.moveaxis(X_freq, 0, -1).reshape(D, C, rows, cols)
    planes_c = np.fft.ifft2(spect)
    real_energy = np.sum(planes_c.real ** 2)
    imag_energy = np.sum(planes_c.imag ** 2)
    if imag_energy > _IMAG_RESIDUE_TOL * max(real_energy, np.finfo(float).tiny):
        raise FloatingPointError(
            "reconstruction has non-negligible imaginary energy; "
            "inputs are not consistent real images")
    return planes_c.real


def reconstruct_separable(meas, psfs, cfg=ReconConfig()):
    """Closed-form multi-plane reconstruction, one small system per frequency."""
    if meas.frames.shape[0] != psfs.num_masks:
        raise ValueError("measurement count must match the PSF stack")
    if meas.frames.shape[2:] != psfs.sensor_dims:
        raise ValueError("measurement grid must match the sensor grid")
    rows, cols = psfs.sensor_dims
    D = psfs.num_planes
    C = meas.num_channels
    M = rows * cols

    Phi = psf_spectra(psfs)                                  # (M, K, D)
    Y = np.fft.fft2(meas.frames).reshape(meas.num_frames, C, M)
    Y = np.moveaxis(Y, -1, 0)                                # (M, K, C)
    tau = tau_per_frequency(Phi, cfg.tau0, cfg.tau_rule)

    X = np.empty((M, D, C), dtype=complex)
    chunks = [(s, min(s + _FREQ_CHUNK, M)) for s in range(0, M, _FREQ_CHUNK)]

    def run(bounds):
        s, e = bounds
        X[s:e] = _solve_chunk(Phi[s:e], Y[s:e], tau[s:e],
                              cfg.solver, cfg.cg_tol, cfg.cg_max_iter,
                              offset=s)

    try:
        if cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                for _ in pool.map(run, chunks):
                    pass
        else:
            for bounds in chunks:
                run(bounds)
    except SingularSystemError as exc:
        # re-raise with the flat index mapped onto the frequency grid
        raise SingularSystemError(exc.freq_index, (rows, cols)) from None

    planes = _to_real_planes(X, D, C, rows, cols)
    return PlaneStack(planes=planes, depths=psfs.depths, is_reconstruction=True)


def _circulant_conv_matrix(psf):
    """Dense matrix of 2D circular convolution with `psf` (column per shift)."""
    rows, cols = psf.shape
    M = rows * cols
    mat = np.empty((M, M))
    for i in range(rows):
        for j in range(cols):
            mat[:, i * cols + j] = np.roll(psf, (i, j), axis=(0, 1)).ravel()
    return mat


def reconstruct_dense_oracle(meas, psfs, tau):
    """Solve the full MK x MD Tikhonov system directly. Test oracle only.

    The ridge problem is solved through the augmented least-squares
    system [A; sqrt(tau) I] x = [y; 0], which is mathematically the
    Tikhonov normal equations but avoids squaring the condition number.
    """
    rows, cols = psfs.sensor_dims
    M = rows * cols
    K, D = psfs.num_masks, psfs.num_planes
    if M * D > _DENSE_UNKNOWN_CAP:
        raise ValueError(
            f"dense oracle capped at {_DENSE_UNKNOWN_CAP} unknowns, got {M * D}")
    A = np.block([[_circulant_conv_matrix(psfs.psfs[k, z]) for z in range(D)]
                  for k in range(K)])                        # (MK, MD)
    aug = np.vstack([A, np.sqrt(tau) * np.eye(M * D)])
    C = meas.num_channels
    rhs = np.vstack([meas.frames.transpose(1, 0, 2, 3).reshape(C, K * M).T,
                     np.zeros((M * D, C))])
    if tau == 0:
        aug = A
        rhs = rhs[:K * M]
    x, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    planes = x.T.reshape(C, D, rows, cols).transpose(1, 0, 2, 3)
    return PlaneStack(planes=planes, depths=psfs.depths, is_reconstruction=True)


def reconstruct_sweepcam(meas, psfs, z_index, tau):
    """Single-plane focusing baseline: per-frequency scalar quotient.

    Equivalent to the separable solver restricted to one depth plane.
    Returns a C x rows x cols real image.
    """
    if not 0 <= z_index < psfs.num_planes:
        raise IndexError(f"plane index {z_index} out of range")
    rows, cols = psfs.sensor_dims
    Phi_z = np.fft.fft2(psfs.psfs[:, z_index])               # (K, r, c)
    Y = np.fft.fft2(meas.frames)                             # (K, C, r, c)
    num = np.einsum("kxy,kcxy->cxy", np.conj(Phi_z), Y)
    den = np.sum(np.abs(Phi_z) ** 2, axis=0) + tau
    img_c = np.fft.ifft2(num / den)
    real_energy = np.sum(img_c.real ** 2)
    if np.sum(img_c.imag ** 2) > _IMAG_RESIDUE_TOL * max(real_energy,
                                                         np.finfo(float).tiny):
        raise FloatingPointError("sweepcam image has non-negligible imaginary energy")
    return img_c.real


def condition_report(psfs, cfg=ReconConfig()):
    """2-norm condition number of (Phi^H Phi + tau I) per frequency.

    Returned as a rows x cols map over the frequency grid.
    """
    rows, cols = psfs.sensor_dims
    Phi = psf_spectra(psfs)
    tau = tau_per_frequency(Phi, cfg.tau0, cfg.tau_rule)
    D = psfs.num_planes
    PhiH = np.conj(np.swapaxes(Phi, 1, 2))
    A = PhiH @ Phi
    A[:, np.arange(D), np.arange(D)] += tau[:, None]
    return np.linalg.cond(A).reshape(rows, cols)


def normal_equation_residual(meas, psfs, cfg, planes):
    """Per-frequency relative residual of the normal equations.

    Diagnostic used by tests and run manifests: the returned value at
    each frequency is ||(Phi^H Phi + tau I) L - Phi^H Y|| / ||Phi^H Y||.
    """
    rows, cols = psfs.sensor_dims
    D = psfs.num_planes
    C = meas.num_channels
    M = rows * cols
    Phi = psf_spectra(psfs)
    Y = np.moveaxis(np.fft.fft2(meas.frames).reshape(-1, C, M), -1, 0)
    tau = tau_per_frequency(Phi, cfg.tau0, cfg.tau_rule)
    X = np.moveaxis(np.fft.fft2(planes.planes).reshape(D, C, M), -1, 0)
    PhiH = np.conj(np.swapaxes(Phi, 1, 2))
    A = PhiH @ Phi
    A[:, np.arange(D), np.arange(D)] += tau[:, None]
    b = PhiH @ Y
    res = np.linalg.norm(A @ X - b, axis=(1, 2))
    ref = np.linalg.norm(b, axis=(1, 2))
    return (res / np.maximum(ref, np.finfo(float).tiny)).reshape(rows, cols)
