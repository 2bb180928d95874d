"""bevkit: multi-camera bird's-eye-view perception geometry toolkit."""

from .camera import (Camera, CameraRig, Extrinsics, Intrinsics, PixelRay,
                     boxes_3d_to_2d, load_rig, pixel_to_ray, project_point,
                     save_rig)
from .voxel import (BevGrid, FeatureImage, VoxelGrid, VoxelGridSpec,
                    bev_centerness, encoder_cost, spatial_to_channel,
                    channel_to_spatial, unproject)
from .boxes import (AnchorSpec, Box3D, bev_iou, generate_anchor_array,
                    generate_anchors, rotated_nms)
from .assign import (AnchorPrediction, AssignmentResult, assign_dynamic,
                     assign_fixed_iou)
from .losses import (LossReport, LossWeights, dice_loss, direction_loss,
                     focal_loss, smooth_l1_box, total_loss, weighted_bce_seg)
from .metrics import EvalResult, center_distance_ap, seg_iou
from .scene import NoiseSpec, SyntheticScene, generate_scene, perturb_extrinsics
from .sweep import run_noise_sweep

__version__ = "0.1.0"
