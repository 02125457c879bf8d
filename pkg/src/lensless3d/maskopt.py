"""Learning binary mask patterns by gradient descent.

Masks are relaxed to m = 2*sigmoid(s*w) - 1 of unconstrained logits w,
with the sigmoid slope s annealed upward until the relaxation is
effectively binary, then hard-thresholded to -1/+1. The loss is the MSE
between a scene's ground-truth planes and their reconstruction through
the full differentiable chain: sigmoid -> PSF interpolation -> forward
convolution (+ noise, treated as data) -> per-frequency closed-form
solve -> inverse FFT. The gradient is exact reverse-mode, written out
by hand with matrix-calculus adjoint rules for X = A^{-1} b.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .psf import MaskPattern, MaskSet, _interp_operator
from .recon import tau_per_frequency


@dataclass
class RelaxedMaskVariable:
    """Unconstrained logits for K masks plus the current sigmoid slope."""

    w: np.ndarray          # K x P_u x P_v
    slope: float = 1.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 3:
            raise ValueError("w must be K x P_u x P_v")
        if self.slope <= 0:
            raise ValueError("slope must be positive")

    def realized(self):
        """Current relaxed masks inside [-1, 1], open except at saturation."""
        return 2.0 * expit(self.slope * self.w) - 1.0


def geometric_slope_schedule(epochs, s0=1.0, s_final=50.0):
    """Nondecreasing slope schedule s(e) = s0 * r^e with s(last) = s_final."""
    if epochs <= 1:
        return lambda epoch: s0
    r = (s_final / s0) ** (1.0 / (epochs - 1))
    return lambda epoch: s0 * r ** epoch


@dataclass
class OptimConfig:
    """Training setup for mask optimization."""

    epochs: int
    scenes: list
    learning_rate: float = 0.01
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    slope_schedule: "callable" = None
    snr_db: float = np.inf
    tau0: float = 1e-6
    tau_rule: str = "constant"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.slope_schedule is None:
            self.slope_schedule = geometric_slope_schedule(self.epochs)


def binarize(var):
    """Hard-threshold the logits at 0 to a binary mask set (sign(0) = +1)."""
    vals = np.where(var.w >= 0, 1.0, -1.0)
    return MaskSet(tuple(MaskPattern(v, is_binary=True) for v in vals))


def _psf_operators(geom, depths):
    return [_interp_operator(geom, float(z)) for z in depths.depths_z_mm]


def loss_and_gradient(var, scene, geom, depths, cfg, rng_seed=0):
    """MSE reconstruction loss and its exact gradient w.r.t. the logits.

    Noise (when cfg.snr_db is finite) is drawn fresh from rng_seed and
    treated as a constant with respect to the masks.
    """
    K = var.w.shape[0]
    if var.w.shape[1:] != geom.mask_dims:
        raise ValueError("logit shape must match the mask grid")
    if scene.image_dims != geom.sensor_dims:
        raise ValueError("scene grid must match the sensor grid")
    D = depths.count
    if scene.num_planes != D:
        raise ValueError("scene plane count must match the depth sampling")
    C = scene.num_channels
    rows, cols = geom.sensor_dims
    M = rows * cols
    ops = _psf_operators(geom, depths)

    # forward: logits -> relaxed masks -> PSFs -> spectra
    m = var.realized()                                        # (K, Pu, Pv)
    m_flat = m.reshape(K, -1)
    psfs = np.empty((K, D, rows, cols))
    for z in range(D):
        psfs[:, z] = (ops[z] @ m_flat.T).T.reshape(K, rows, cols)
    Phi = np.moveaxis(np.fft.fft2(psfs).reshape(K, D, M), -1, 0)  # (M, K, D)

    L_true = np.fft.fft2(scene.planes).reshape(D, C, M)
    L_true = np.moveaxis(L_true, -1, 0)                       # (M, D, C)

    Y = Phi @ L_true                                          # (M, K, C)
    if np.isfinite(cfg.snr_db):
        frames = np.fft.ifft2(
            np.moveaxis(Y, 0, -1).reshape(K, C, rows, cols)).real
        sigma = np.sqrt(np.mean(frames ** 2) * 10.0 ** (-cfg.snr_db / 10.0))
        rng = np.random.default_rng(rng_seed)
        noise = rng.normal(0.0, sigma, size=(K, C, rows, cols))
        N = np.moveaxis(np.fft.fft2(noise).reshape(K, C, M), -1, 0)
        Y = Y + N

    tau = tau_per_frequency(Phi, cfg.tau0, cfg.tau_rule)      # (M,)
    PhiH = np.conj(np.swapaxes(Phi, 1, 2))                    # (M, D, K)
    G = PhiH @ Phi
    G[:, np.arange(D), np.arange(D)] += tau[:, None]
    b = PhiH @ Y                                              # (M, D, C)
    X = np.linalg.solve(G, b)                                 # (M, D, C)

    recon = np.fft.ifft2(np.moveaxis(X, 0, -1).reshape(D, C, rows, cols)).real
    diff = recon - scene.planes
    loss = float(np.mean(diff ** 2))

    # reverse pass; cotangents follow dL = Re<bar, d(.)>
    xbar = 2.0 * diff / diff.size
    Xbar = np.moveaxis(np.fft.fft2(xbar).reshape(D, C, M), -1, 0) / M
    bbar = np.linalg.solve(G, Xbar)                           # G Hermitian
    XH = np.conj(np.swapaxes(X, 1, 2))                        # (M, C, D)
    Gbar = -bbar @ XH                                         # (M, D, D)

    bbarH = np.conj(np.swapaxes(bbar, 1, 2))                  # (M, C, D)
    GbarH = np.conj(np.swapaxes(Gbar, 1, 2))
    LH = np.conj(np.swapaxes(L_true, 1, 2))                   # (M, C, D)
    Ybar = Phi @ bbar                                         # (M, K, C)
    Phibar = Y @ bbarH + Phi @ (Gbar + GbarH) + Ybar @ LH
    if cfg.tau_rule == "frobenius_scaled":
        taubar = np.trace(Gbar, axis1=1, axis2=2).real        # (M,)
        Phibar = Phibar + (2.0 * cfg.tau0 / (K * D)) * taubar[:, None, None] * Phi

    psf_bar = np.fft.ifft2(
        np.moveaxis(Phibar, 0, -1).reshape(K, D, rows, cols)).real * M
    grad_m = np.zeros((K, m_flat.shape[1]))
    for z in range(D):
        grad_m += (ops[z].T @ psf_bar[:, z].reshape(K, -1).T).T
    grad_m = grad_m.reshape(m.shape)
    grad_w = grad_m * (var.slope * (1.0 - m ** 2) / 2.0)
    return loss, grad_w


class Adam:
    """Adaptive-moment gradient descent on a single array variable."""

    def __init__(self, shape, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class DivergenceError(RuntimeError):
    pass


def optimize_masks(init, geom, depths, cfg, rng_seed=0):
    """Adam training loop over the scene collection.

    One scene per step; the sigmoid slope follows cfg.slope_schedule;
    fresh noise every step. Returns the binarized mask set and the
    per-epoch mean loss curve.
    """
    if not cfg.scenes:
        raise ValueError("at least one training scene is required")
    var = RelaxedMaskVariable(w=init.w.copy(), slope=init.slope)
    if cfg.epochs == 0:
        return binarize(var), []
    adam = Adam(var.w.shape, lr=cfg.learning_rate, betas=cfg.adam_betas,
                eps=cfg.adam_eps)
    loss_curve = []
    initial_loss = None
    step = 0
    for epoch in range(cfg.epochs):
        var.slope = float(cfg.slope_schedule(epoch))
        epoch_losses = []
        for scene in cfg.scenes:
            # counter-based seed split: step index never perturbs earlier draws
            loss, grad = loss_and_gradient(
                var, scene, geom, depths, cfg, rng_seed=[rng_seed, step])
            if initial_loss is None:
                initial_loss = loss
            if loss > 1e3 * initial_loss:
                raise DivergenceError(
                    f"loss {loss:.3e} exceeds 1000x initial {initial_loss:.3e}")
            var.w += adam.step(grad)
            epoch_losses.append(loss)
            step += 1
        loss_curve.append(float(np.mean(epoch_losses)))
    return binarize(var), loss_curve
