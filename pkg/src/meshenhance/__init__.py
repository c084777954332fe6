"""Mesh appearance and fidelity enhancement.

2D deformation fields repair multiview inconsistency before unprojection;
a per-face Jacobian field deforms geometry toward an input image; vertex
colors come from occlusion-aware unprojection of posed images.
"""

from .camera import Camera, project, project_points
from .config import PipelineConfig
from .deform2d import DeformationField2D, deform_image
from .deform3d import JacobianField, PoissonSystem, init_jacobians, poisson_solve
from .enhance import (LossWeights, RefineWeights, enhance_appearance,
                      enhance_fidelity, estimate_camera, refine_geometry)
from .image import ImageRGBA, load_png, save_png
from .mesh import Mesh, MeshError, load_obj, load_ply, save_obj, save_ply
from .metrics import EvalReport, chamfer_fscore, ghosting_metric, psnr, silhouette_iou, ssim
from .optim import OptimConfig
from .raster import render, render_backward, render_normal_map
from .scenario import Scenario, load_scenario, make_gt_mesh, make_scenario, save_scenario
from .unproject import PosedImage, unproject, unproject_backward

__version__ = "0.1.0"
