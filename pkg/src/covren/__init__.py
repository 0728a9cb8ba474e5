"""Object-composable volumetric rendering.

Fit per-object voxel volumes (density, radiance, occupancy) from posed
images by differentiable rendering with analytic gradients, compose the
fitted objects into new physically settled scenes, and render those to
color, depth, modal/amodal masks, and meshes for dataset generation.
"""

from .compositor import (CompositeResult, PerObjectWeights, RaySampleBatch,
                         RenderConfig, RenderOutput, composite, render_ray,
                         render_rays, render_scene, sample_ts)
from .dataset_io import (CameraRecord, SceneRecord, load_scene_record,
                         read_manifest, read_pfm, validate_dataset,
                         write_pfm, write_scene_record)
from .errors import (ContractError, CovrenError, DatasetError, DomainError,
                     FormatError, MeshFormatError, PlacementError,
                     SceneFormatError, VolumeFormatError)
from .fitting import (FitConfig, FitResult, LatentObject, LatentScene,
                      LatentVolume, RayTargets, TrainView, fit,
                      occupancy_loss_and_gradients,
                      occupancy_targets_from_density, ray_loss_and_gradients)
from .geometry import (AxisAlignedBox, CameraIntrinsics, Ray, RigidPose,
                       camera_rays, intersect_ray_box, intersect_rays_box,
                       look_at_pose, object_to_world, posed_aabb,
                       project_point, ray_for_pixel, world_to_object)
from .meshing import (TriangleMesh, export_obj, extract_mesh, is_watertight,
                      load_obj, marching_cubes, mesh_aabb, mesh_volume)
from .metrics import psnr, ssim
from .scene import Scene, SceneObject, load_scene, save_scene
from .synthesis import (ComposedScene, GenerationConfig, LibraryEntry,
                        PlacedObject, SettleParams, SettleReport,
                        VolumeLibrary, generate, ring_cameras,
                        sample_initial_pose, settle)
from .volumes import (BackgroundVolume, ObjectVolume, VolumeSample,
                      load_volume, sample_trilinear,
                      sample_trilinear_with_weights, save_volume)

__version__ = "0.1.0"
