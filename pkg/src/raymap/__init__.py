"""raymap: desk-scale radio map simulation and few-shot diffusion adaptation.

The package couples a grid-based multipath simulator (image-source method
with a residual decomposition between main-path and multipath maps), a
feature-space toolkit for estimating and regularizing cross-domain shifts,
and a small variance-preserving diffusion harness that fine-tunes on a
handful of paired samples.
"""

__version__ = "0.1.0"

from .envgrid import (OccupancyGrid, Scene, SceneParams,  # noqa: F401
                      Transmitter, distance_field, generate_scene,
                      load_scene, los_visible, save_scene)
from .fields import RadioMap, load_radiomap, save_radiomap  # noqa: F401
from .propagate import (LowPassKernel, Path, PathSet,  # noqa: F401
                        ResidualResult, VisibilityState, enumerate_paths,
                        gaussian_kernel, load_pair, lowpass, path_power,
                        residual, save_pair, solve_mp, solve_mu, solve_scene,
                        verify_lowfreq_bound, visibility_state)
from .featspace import (Encoder, FeatureVector, ShiftGeometry,  # noqa: F401
                        cone_membership, dcl_batch, dcl_finetune,
                        distance_stability_check, encode, estimate_shift,
                        feature_increment_check, identity_encoder,
                        load_geometry, make_encoder, project, save_geometry)
from .metrics import (MetricsReport, evaluate_maps, format_report,  # noqa: F401
                      nmse, parse_report, psnr, rmse, ssim)
