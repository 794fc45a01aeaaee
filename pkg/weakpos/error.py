"""WeakPos Errors"""

import json
from enum import Enum
from typing import Dict


class ErrorKind(Enum):
    """Kinds of failures reported by the workbench"""

    ORIGIN_OCCUPIED = "OriginOccupied"
    OUT_OF_BOUNDS = "OutOfBounds"
    NON_UNIT_DIRECTION = "NonUnitDirection"
    DISCONNECTED_FREE_SPACE = "DisconnectedFreeSpace"
    RETRY_EXHAUSTED = "RetryExhausted"
    STUCK = "Stuck"
    NO_LANDMARKS = "NoLandmarks"
    DIMENSION_MISMATCH = "DimensionMismatch"
    STALE_CACHE = "StaleCache"
    SCHEMA_MISMATCH = "SchemaMismatch"
    SHAPE_MISMATCH = "ShapeMismatch"
    EMPTY_PAIR_SET = "EmptyPairSet"
    BATCH_TOO_SMALL = "BatchTooSmall"
    SINGULAR_NORMAL_EQUATIONS = "SingularNormalEquations"
    DEGENERATE_GEOMETRY = "DegenerateGeometry"
    EMPTY_TRAINING_SET = "EmptyTrainingSet"
    DEGENERATE_CLOUD = "DegenerateCloud"
    LENGTH_MISMATCH = "LengthMismatch"
    SAMPLE_BUDGET_EXCEEDED = "SampleBudgetExceeded"
    INVALID_CONFIG = "InvalidConfig"
    NON_FINITE_LOSS = "NonFiniteLoss"


class WeakPosError(Exception):
    """General exception for all workbench errors"""

    def __init__(self, kind: ErrorKind, message: str):
        self._kind = kind
        self._message = message
        super().__init__(f"{self._kind.value}: {self.message}")

    @staticmethod
    def from_record(record: str) -> "WeakPosError":
        """Create WeakPosError from the JSON record printed by the CLI"""
        data = json.loads(record)
        return WeakPosError(ErrorKind(data["error"]), data["message"])

    def to_record(self) -> str:
        """Machine-readable JSON record of the error"""
        payload: Dict[str, str] = {"error": self._kind.value, "message": self.message}
        return json.dumps(payload)

    @property
    def kind(self) -> ErrorKind:
        """Return error kind"""
        return self._kind

    @property
    def message(self) -> str:
        """Return error message"""
        return self._message

    def __eq__(self, other: "WeakPosError"):
        return self._kind == other._kind and self._message == other._message

    def __hash__(self):
        return hash((self._kind, self._message))
