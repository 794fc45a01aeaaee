"""WeakPos module"""

from weakpos.env import (
    Environment2D,
    OccupancyGrid,
    ray_cast,
    segment_clear,
    generate_landmark_env,
    generate_room_env,
    save_environment,
    load_environment,
)

from weakpos.collect import (
    Observation,
    Segment,
    ConstraintGraph,
    apply_odometry_noise,
    observe_landmarks,
    observe_lidar,
    orientation_variants,
    collect_endpoint,
    collect_dense,
    save_dataset,
    load_dataset,
)

from weakpos.net import (
    MlpModel,
    AdamState,
    Batch,
    forward,
    backward,
    adam_step,
    init_params,
    checkpoint_save,
    checkpoint_load,
)

from weakpos.losses import (
    PairConstraint,
    PairSet,
    LossValue,
    supervised_loss,
    weak_pair_term,
    dense_segment_loss,
    generic_constraint_loss,
    make_batches,
)

from weakpos.baselines import (
    ExplicitState,
    EdmMatrix,
    PcaBasis,
    explicit_solve,
    triangulate,
    classical_mds,
    pca_fit,
    pca_project,
    knn_predict,
)

from weakpos.evaluation import (
    RigidTransform2D,
    EvalReport,
    SweepTable,
    rigid_align,
    ate_stats,
    error_grid,
)

from weakpos.sweep import noise_sweep, sample_count_sweep

from weakpos.experiment import (
    load_config,
    cmd_collect,
    cmd_train,
    cmd_eval,
    cmd_sweep,
)

from weakpos.msg.config import ExperimentConfig, NoiseConfig, CollectionConfig

from weakpos.msg.report import RunManifest

from weakpos.error import WeakPosError, ErrorKind
