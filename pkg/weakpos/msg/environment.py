"""Message types for environment files"""

from typing import List, Optional, Tuple

from pydantic import BaseModel

from weakpos.msg.config import Bounds

ENVIRONMENT_SCHEMA_VERSION = 1


class OccupancyInfo(BaseModel):
    """Serialized occupancy grid"""

    rows: int
    """number of grid rows"""

    cols: int
    """number of grid columns"""

    cell_size: float
    """world units per cell"""

    origin: Tuple[float, float]
    """world coordinates of the lower-left grid corner"""

    cells: List[int]
    """row-major occupancy, 1 for occupied"""


class EnvironmentFile(BaseModel):
    """Environment document"""

    schema_version: int = ENVIRONMENT_SCHEMA_VERSION
    """version of the document layout"""

    bounds: Bounds
    """world rectangle"""

    landmarks: List[Tuple[float, float]] = []
    """landmark positions in observation order"""

    occupancy: Optional[OccupancyInfo] = None
    """obstacle grid, absent for landmark worlds"""

    seed: Optional[int] = None
    """seed the environment was generated from"""
