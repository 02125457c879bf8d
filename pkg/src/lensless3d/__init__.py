"""Programmable-mask lensless 3D imaging toolkit.

Simulates a mask-based lensless camera, reconstructs multi-plane scenes
with a frequency-separated closed-form solver, learns mask patterns by
gradient descent through that solver, and fuses recovered planes into
an all-in-focus image and depth map.
"""

from .geometry import (CameraGeometry, DepthSampling, GeometryError,
                       alpha_from_z, magnification, sample_depths,
                       z_from_alpha)
from .psf import (MaskPattern, MaskSet, PsfStack, mask_from_grayscale,
                  psf_adjoint, synthesize_psf, synthesize_stack)
from .forward import (MeasurementSet, PlaneStack, add_noise, simulate,
                      simulate_split_capture)
from .recon import (ReconConfig, SingularSystemError, condition_report,
                    normal_equation_residual, reconstruct_dense_oracle,
                    reconstruct_separable, reconstruct_sweepcam)
from .maskopt import (Adam, OptimConfig, RelaxedMaskVariable, binarize,
                      geometric_slope_schedule, loss_and_gradient,
                      optimize_masks)
from .fusion import (EvalReport, FusionResult, depth_accuracy,
                     depth_odds_ratio, evaluate, gaussian_plane_denoiser,
                     local_contrast, local_contrast_fuse,
                     low_intensity_mask, ssim)
from .scene_io import (RgbdScene, StackFormatError, generate_procedural_scene,
                       quantize_to_planes, read_manifest, read_stack,
                       write_manifest, write_stack)
from .masks import make_masks, mls_masks, mls_sequence, random_masks, \
    shifted_mls_masks

__version__ = "0.1.0"
