"""Message types for dataset files"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel

DATASET_SCHEMA_VERSION = 1


class Modality(Enum):
    """Kind of local observation"""

    LANDMARKS = "landmarks"
    """distances to known landmarks"""

    LIDAR = "lidar"
    """ordered 2D lidar scan in the sensor frame"""


class DatasetHeader(BaseModel):
    """First line of a dataset file"""

    schema_version: int = DATASET_SCHEMA_VERSION
    """version of the file layout"""

    modality: Modality
    """observation modality"""

    env_reference: Optional[str] = None
    """path of the environment document the data was collected in"""

    config: Dict[str, Any] = {}
    """echo of the collection configuration"""

    seed: Dict[str, int] = {}
    """seeds used for collection"""

    n: int
    """number of observations"""

    segment_count: int
    """number of line segments L"""


class ObservationRecord(BaseModel):
    """One observation of a dataset file"""

    index: int
    """observation index"""

    segment_id: int
    """segment the observation was sampled on"""

    arc_label: float
    """measured distance from the segment start"""

    extra_memberships: List[Tuple[int, float]] = []
    """further (segment_id, arc_label) pairs for shared end-point waypoints"""

    landmark_distances: Optional[List[float]] = None
    """range to each landmark, clipped at d_max"""

    lidar_ranges: Optional[List[List[float]]] = None
    """per-variant beam ranges, beam j at sensor angle 2*pi*j/n_beams"""

    headings: Optional[List[float]] = None
    """hidden sensor heading of each lidar variant"""

    gt_position: Optional[Tuple[float, float]] = None
    """true position, for evaluation only"""
