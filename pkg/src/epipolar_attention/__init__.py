"""Epipolar-constrained 3D attention: geometry, masks, suppression loss,
low-rank motion adapters and the diffusion training objective."""

from .adapters import LoraAdapter, ToyDitBlock, bml_forward, merge_adapter
from .attention import (AttentionMap, ProjectionWeights, TokenIndex, VideoLatent,
                        attention_map, background_token_set, flatten_latent,
                        percentile_threshold, unflatten_latent)
from .constraint import (EpipolarLossReport, SuppressionMask, epipolar_loss,
                         epipolar_loss_grad, suppression_mask, target_attention_map)
from .epipolar import (EpipolarLine, EpipolarMask, EpipolarMaskVolume, epipolar_line,
                       epipolar_mask, mask_volume, point_line_distance)
from .errors import (DegenerateMotion, DegenerateSchedule, DimensionMismatch, EmptyRow,
                     FormatError, LineUndefined, NonFiniteInput, NonRotation, ParseError)
from .geometry import (CameraExtrinsics, CameraIntrinsics, CameraPose, FundamentalMatrix,
                       fundamental_matrix, relative_pose, skew)
from .objective import (NoisySample, RandomConvFeatures, add_noise, latent_loss,
                        linear_alpha_bar, one_step_x0, perceptual_loss, total_loss, vgg_gate)
from .trajectory_io import (Trajectory, load_trajectory, parse_trajectory, read_trajectory,
                            to_latent, write_trajectory, rescale_intrinsics, serialize_trajectory,
                            subsample_to_latent_frames)

__version__ = "0.1.0"
