"""Message types for model checkpoints"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel

CHECKPOINT_SCHEMA_VERSION = 1


class CheckpointHeader(BaseModel):
    """JSON line in front of the raw parameter arrays"""

    schema_version: int = CHECKPOINT_SCHEMA_VERSION
    """version of the file layout"""

    layer_sizes: List[int]
    """units per layer, input first"""

    activation: str = "relu"
    """hidden activation"""

    step: int = 0
    """Adam step counter"""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    epoch: int = 0
    """completed training epochs"""

    loss_trace: List[float] = []
    """mean loss of every completed epoch"""

    config: Dict[str, Any] = {}
    """training configuration echo"""


class BaselineHeader(BaseModel):
    """Fitted baseline state"""

    schema_version: int = CHECKPOINT_SCHEMA_VERSION
    """version of the file layout"""

    method: str
    """baseline method name"""

    arrays: Dict[str, List[List[float]]] = {}
    """small fitted arrays, stored inline"""

    arrays_file: Optional[str] = None
    """companion .npz archive for large arrays"""

    meta: Dict[str, Any] = {}
    """scalar results and flags"""

    config: Dict[str, Any] = {}
    """configuration echo"""
