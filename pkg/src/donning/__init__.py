"""Simulated robot-assisted dressing: cloth, body, rewards, and TRPO."""

from .body import (BodyModel, BodyState, bone_segments, default_body,
                   forward_kinematics, integrate_action, load_body, save_body)
from .clothsim import (ClothParams, ClothState, ContactRecord, bin_contacts,
                       read_frames, rest_cloth, step_cloth, surface_sign,
                       write_frames)
from .env import (DressingEnv, EnvConfig, EpisodeConfig, TaskSpec, default_task,
                  evaluate, load_config, save_config)
from .errors import (ConfigError, DegenerateGeometryError, DonningError,
                     IncompatibleCheckpointError, InvalidActionError,
                     LimitViolationError, ObservationError,
                     SolverDivergenceError, TopologyError,
                     UnreachableVertexError, UsageError)
from .garment import (FeatureLoop, GarmentMesh, build_geodesic_field,
                      fit_feature_plane, geodesic_gradient, load_garment,
                      save_garment, sleeve_mesh, triangle_deformation)
from .percept import OBS_DIM, SEGMENTS, Observation, build_observation, task_vector
from .rewards import (RewardBreakdown, RewardWeights, containment,
                      deformation_penalty, full_reward, geodesic_reward,
                      progress_reward, total_reward, upright_reward)
from .trainer import (LinearFeatureBaseline, PointMassEnv, PolicyNet,
                      TrainerConfig, compute_advantages, load_checkpoint,
                      sample_rollouts, save_checkpoint, train, trpo_step)

__version__ = "0.1.0"
