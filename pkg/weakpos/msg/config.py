"""Configuration messages for experiments"""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SEED_NAMES = ("env", "trajectory", "noise", "init", "shuffle", "eval")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvKind(Enum):
    """Kind of simulated world"""

    LANDMARKS = "landmarks"
    """open square with point landmarks"""

    ROOM = "room"
    """occupancy-grid room for lidar"""


class Strategy(Enum):
    """Data collection strategy"""

    DENSE = "dense"
    """many samples along straight segments"""

    ENDPOINT = "endpoint"
    """only the distance between consecutive waypoints"""


class NoiseMode(Enum):
    """How odometry noise perturbs arc labels"""

    INCREMENT = "increment"
    """noise on each consecutive-sample increment, then accumulated"""

    ABSOLUTE = "absolute"
    """each label measured independently from the segment start"""


class Method(Enum):
    """Positioning method to train and evaluate"""

    DEEPGPS = "deepgps"
    SUPERVISED = "supervised"
    EXPLICIT = "explicit"
    MDS_ORACLE = "mds_oracle"
    PCA_KNN = "pca_knn"


class LossVariant(Enum):
    """Weak loss flavour"""

    NORMALIZED = "normalized"
    UNNORMALIZED = "unnormalized"


class SweepKind(Enum):
    """Swept robustness factor"""

    NOISE = "noise"
    SAMPLES = "samples"


class Bounds(_Strict):
    """Axis-aligned rectangle in world units"""

    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> "Bounds":
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("bounds must satisfy xmin < xmax and ymin < ymax")
        return self

    def as_tuple(self) -> Tuple[float, float, float, float]:
        """Bounds as (xmin, xmax, ymin, ymax)"""
        return self.xmin, self.xmax, self.ymin, self.ymax


class Obstacle(_Strict):
    """Rectangular block of occupied cells"""

    row: int = Field(ge=0)
    col: int = Field(ge=0)
    height: int = Field(gt=0)
    width: int = Field(gt=0)


class RoomSpec(_Strict):
    """Layout parameters of a procedural room"""

    rows: int = Field(64, ge=3)
    cols: int = Field(64, ge=3)
    cell_size: float = Field(0.1, gt=0)
    origin: Tuple[float, float] = (0.0, 0.0)
    obstacles: List[Obstacle] = []
    """explicit interior obstacles"""
    random_obstacles: int = Field(0, ge=0)
    """extra obstacles placed from the seeded stream"""
    obstacle_size: Tuple[int, int] = (3, 10)
    """min and max side of random obstacles in cells"""


class NoiseConfig(_Strict):
    """Odometry noise model"""

    w: float = Field(0.0, ge=0)
    """noise factor, sigma = w * distance"""
    mode: NoiseMode = NoiseMode.INCREMENT


class EnvironmentConfig(_Strict):
    """World to simulate"""

    kind: EnvKind = EnvKind.LANDMARKS
    file: Optional[str] = None
    """load the environment from a file instead of generating it"""
    bounds: Bounds = Field(default_factory=Bounds)
    landmark_count: int = Field(128, gt=0)
    room: RoomSpec = Field(default_factory=RoomSpec)


class CollectionConfig(_Strict):
    """Robot data collection"""

    strategy: Strategy = Strategy.DENSE
    spacing: float = Field(0.02, gt=0)
    segments: Optional[int] = Field(128, gt=0)
    """number of line segments L"""
    budget: Optional[int] = Field(None, gt=0)
    """sample budget, stops collection once reached"""
    positions: int = Field(1570, ge=2)
    """waypoint count N for the end-point strategy"""
    min_segment_length: float = Field(0.0, ge=0)
    """dense headings with less free travel are redrawn, 0 disables"""
    d_max: Optional[float] = Field(None, gt=0)
    """landmark range cutoff, None means no clipping"""
    n_beams: int = Field(256, gt=0)
    max_range: float = Field(10.0, gt=0)
    orientations: int = Field(100, gt=0)
    """size R of the heading grid"""
    orientation_sample: int = Field(5, gt=0)
    """variants stored per lidar position"""
    noise: NoiseConfig = Field(default_factory=NoiseConfig)

    @model_validator(mode="after")
    def _sizes(self) -> "CollectionConfig":
        if self.orientation_sample > self.orientations:
            raise ValueError("orientation_sample must not exceed orientations")
        if self.strategy == Strategy.DENSE and not (self.segments or self.budget):
            raise ValueError("dense collection needs segments or budget")
        return self


class ModelConfig(_Strict):
    """Network architecture"""

    layer_sizes: List[int] = [128, 512, 512, 512, 256, 256, 128, 64, 2]
    activation: str = "relu"

    @field_validator("layer_sizes")
    @classmethod
    def _layers(cls, value: List[int]) -> List[int]:
        if len(value) < 2 or any(size <= 0 for size in value):
            raise ValueError("need at least two positive layer sizes")
        if value[-1] != 2:
            raise ValueError("output layer must have 2 units")
        return value

    @field_validator("activation")
    @classmethod
    def _activation(cls, value: str) -> str:
        if value != "relu":
            raise ValueError("only 'relu' is supported")
        return value


class TrainingConfig(_Strict):
    """Optimization schedule"""

    epochs: int = Field(1500, gt=0)
    batch_size: int = Field(800, gt=0)
    lr_schedule: Dict[int, float] = {0: 1e-3, 300: 1e-4}
    """epoch -> learning rate, piecewise constant"""
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    loss_variant: LossVariant = LossVariant.NORMALIZED
    log_every: int = Field(50, gt=0)

    @field_validator("lr_schedule")
    @classmethod
    def _schedule(cls, value: Dict[int, float]) -> Dict[int, float]:
        if 0 not in value:
            raise ValueError("lr_schedule must define epoch 0")
        if any(rate <= 0 for rate in value.values()):
            raise ValueError("learning rates must be positive")
        return value

    def learning_rate(self, epoch: int) -> float:
        """Learning rate in effect at the given epoch"""
        start = max(key for key in self.lr_schedule if key <= epoch)
        return self.lr_schedule[start]


class BaselineConfig(_Strict):
    """Settings for comparison methods"""

    explicit_restarts: int = Field(10, gt=0)
    explicit_max_iters: int = Field(100, gt=0)
    explicit_tol: float = Field(1e-10, gt=0)
    explicit_subset: int = Field(400, ge=2)
    """observations (whole segments) used by the joint solve"""
    pca_components: int = Field(128, gt=0)
    knn_k: int = Field(1, gt=0)
    mds_points: int = Field(1000, ge=2)


class EvaluationConfig(_Strict):
    """Evaluation protocol"""

    grid_resolution: int = Field(128, ge=2)
    """per-axis grid count; rooms use their own cell grid"""
    alignment_size: int = Field(500, ge=2)
    test_count: int = Field(2000, gt=0)
    """random lidar test positions"""


class SeedConfig(_Strict):
    """Named seeds, one per randomness concern"""

    env: int = 0
    trajectory: int = 1
    noise: int = 2
    init: int = 3
    shuffle: int = 4
    eval: int = 5


class SweepConfig(_Strict):
    """Robustness sweep"""

    kind: SweepKind = SweepKind.NOISE
    values: List[float] = [0.0, 0.02, 0.04, 0.08, 0.10]

    @field_validator("values")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("sweep values must not be empty")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if value[0] < 0:
            raise ValueError("sweep values must be nonnegative")
        return value


class ExperimentConfig(_Strict):
    """Complete description of one experiment"""

    name: str = "experiment"
    environment: EnvironmentConfig = Field(default_factory=EnvironmentConfig)
    collection: CollectionConfig = Field(default_factory=CollectionConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    method: Method = Method.DEEPGPS
    baselines: BaselineConfig = Field(default_factory=BaselineConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    sweep: Optional[SweepConfig] = None
