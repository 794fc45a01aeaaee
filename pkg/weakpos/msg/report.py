"""Message types for evaluation reports and run manifests"""

from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel

REPORT_SCHEMA_VERSION = 1


class AlignmentInfo(BaseModel):
    """Rigid transform applied before measuring errors"""

    rotation: Tuple[Tuple[float, float], Tuple[float, float]]
    """orthogonal 2x2 matrix, row-major"""

    translation: Tuple[float, float]

    reflection: bool = False
    """True if the matrix has determinant -1"""

    fitted_on: Optional[str] = None
    """point set the transform was estimated on"""


class AteSummary(BaseModel):
    """ATE statistics of one method on one dataset"""

    method: str
    dataset: str
    aligned: bool
    count: int
    rms: float
    median: float
    max: float


class MemoryFootprint(BaseModel):
    """Floats a method keeps to answer queries"""

    deepgps_parameters: int
    pca_knn_floats: int

    @property
    def ratio(self) -> float:
        """How many times larger the retrieval baseline is"""
        return self.pca_knn_floats / self.deepgps_parameters


class ReportDocument(BaseModel):
    """report.json of an evaluation run"""

    schema_version: int = REPORT_SCHEMA_VERSION
    name: str
    method: str
    summaries: List[AteSummary] = []
    alignment: Optional[AlignmentInfo] = None
    diagonal: float
    """environment diagonal, for relative errors"""
    shorter_side: float
    memory: Optional[MemoryFootprint] = None
    flags: Dict[str, Any] = {}
    """non-fatal diagnostics such as not-Euclidean or rank-deficient"""
    config: Dict[str, Any] = {}


class SweepRow(BaseModel):
    """One swept value"""

    param: float
    rms: float
    median: float
    max: float
    flagged: bool = False
    """RMS rose by more than half versus the previous row"""


class SweepDocument(BaseModel):
    """sweep.json of a sweep run"""

    schema_version: int = REPORT_SCHEMA_VERSION
    kind: str
    rows: List[SweepRow]
    config: Dict[str, Any] = {}


class RunManifest(BaseModel):
    """Everything needed to find and replay the outputs of one command"""

    schema_version: int = REPORT_SCHEMA_VERSION
    command: str
    config: Dict[str, Any]
    """full experiment configuration echo"""
    artifacts: Dict[str, str] = {}
    """artifact name -> path"""
    durations: Dict[str, float] = {}
    """stage -> wall-clock seconds"""
    final_loss: Optional[float] = None
