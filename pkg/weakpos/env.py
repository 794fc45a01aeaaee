"""Simulated 2D worlds: landmark fields, occupancy-grid rooms and ray queries"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.config import Bounds, RoomSpec
from weakpos.msg.environment import (
    ENVIRONMENT_SCHEMA_VERSION,
    EnvironmentFile,
    OccupancyInfo,
)

logger = logging.getLogger(__name__)

DIRECTION_TOLERANCE = 1e-9
RETRY_CAP = 1000

BoundsLike = Union[Bounds, Tuple[float, float, float, float]]


def _as_bounds(bounds: BoundsLike) -> Tuple[float, float, float, float]:
    if isinstance(bounds, Bounds):
        return bounds.as_tuple()
    xmin, xmax, ymin, ymax = (float(value) for value in bounds)
    if not (xmin < xmax and ymin < ymax):
        raise ValueError(f"Degenerate bounds {bounds}")
    return xmin, xmax, ymin, ymax


@dataclass(frozen=True)
class OccupancyGrid:
    """Row-major boolean occupancy, row 0 at the lowest y"""

    rows: int
    cols: int
    cell_size: float
    origin: Tuple[float, float]
    cells: np.ndarray
    """(rows, cols) occupancy, True for occupied"""

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.cell_size <= 0:
            raise ValueError("Grid dimensions must be positive")
        cells = np.asarray(self.cells, dtype=bool)
        if cells.size != self.rows * self.cols:
            raise ValueError(
                f"Grid has {cells.size} cells, expected {self.rows * self.cols}"
            )
        cells = cells.reshape(self.rows, self.cols).copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(
            self, "origin", (float(self.origin[0]), float(self.origin[1]))
        )

    @property
    def footprint(self) -> Tuple[float, float, float, float]:
        """Covered rectangle as (xmin, xmax, ymin, ymax)"""
        x0, y0 = self.origin
        return (
            x0,
            x0 + self.cols * self.cell_size,
            y0,
            y0 + self.rows * self.cell_size,
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Mask of points inside the footprint (edges included)"""
        points = np.atleast_2d(points)
        xmin, xmax, ymin, ymax = self.footprint
        return (
            (points[:, 0] >= xmin)
            & (points[:, 0] <= xmax)
            & (points[:, 1] >= ymin)
            & (points[:, 1] <= ymax)
        )

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Cell indices as (col, row) pairs

        Points on a shared edge belong to the cell in the +x/+y direction;
        points on the far footprint edge belong to the last cell.

        Raises:
            WeakPosError: OutOfBounds if a point lies outside the footprint
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.contains(points).all():
            raise WeakPosError(
                ErrorKind.OUT_OF_BOUNDS, "Point outside the grid footprint"
            )
        local = (points - np.asarray(self.origin)) / self.cell_size
        cell = np.floor(local).astype(np.int64)
        cell[:, 0] = np.clip(cell[:, 0], 0, self.cols - 1)
        cell[:, 1] = np.clip(cell[:, 1], 0, self.rows - 1)
        return cell

    def occupied_at(self, cells: np.ndarray) -> np.ndarray:
        """Occupancy of (col, row) cells, False outside the grid"""
        cells = np.atleast_2d(cells)
        inside = self.in_grid(cells)
        result = np.zeros(len(cells), dtype=bool)
        result[inside] = self.cells[cells[inside, 1], cells[inside, 0]]
        return result

    def in_grid(self, cells: np.ndarray) -> np.ndarray:
        """Mask of (col, row) indices inside the grid"""
        cells = np.atleast_2d(cells)
        return (
            (cells[:, 0] >= 0)
            & (cells[:, 0] < self.cols)
            & (cells[:, 1] >= 0)
            & (cells[:, 1] < self.rows)
        )

    def is_free(self, points: np.ndarray) -> np.ndarray:
        """Mask of points lying in free cells (outside points are not free)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.zeros(len(points), dtype=bool)
        inside = self.contains(points)
        if inside.any():
            result[inside] = ~self.occupied_at(self.cell_of(points[inside]))
        return result

    def cell_centers(self, free_only: bool = True) -> np.ndarray:
        """World coordinates of cell centers in row-major order"""
        rows, cols = np.meshgrid(
            np.arange(self.rows), np.arange(self.cols), indexing="ij"
        )
        mask = ~self.cells if free_only else np.ones_like(self.cells)
        x0, y0 = self.origin
        xs = x0 + (cols[mask] + 0.5) * self.cell_size
        ys = y0 + (rows[mask] + 0.5) * self.cell_size
        return np.column_stack([xs, ys])

    @property
    def free_count(self) -> int:
        """Number of free cells"""
        return int((~self.cells).sum())


@dataclass(frozen=True)
class Environment2D:
    """The world being sensed"""

    bounds: Tuple[float, float, float, float]
    """(xmin, xmax, ymin, ymax) in world units"""
    landmarks: np.ndarray
    """(M, 2) landmark positions; order defines observation indices"""
    occupancy: Optional[OccupancyGrid] = None
    seed: Optional[int] = None

    def __post_init__(self):
        bounds = _as_bounds(self.bounds)
        object.__setattr__(self, "bounds", bounds)
        landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 2).copy()
        landmarks.setflags(write=False)
        object.__setattr__(self, "landmarks", landmarks)
        xmin, xmax, ymin, ymax = bounds
        if len(landmarks) and not (
            (landmarks[:, 0] >= xmin).all()
            and (landmarks[:, 0] <= xmax).all()
            and (landmarks[:, 1] >= ymin).all()
            and (landmarks[:, 1] <= ymax).all()
        ):
            raise ValueError("Every landmark must lie within the bounds")
        if self.occupancy is not None and not np.allclose(
            self.occupancy.footprint, bounds, rtol=0.0, atol=1e-9
        ):
            raise ValueError("Occupancy footprint must cover the bounds exactly")

    @property
    def width(self) -> float:
        """Extent along x"""
        return self.bounds[1] - self.bounds[0]

    @property
    def height(self) -> float:
        """Extent along y"""
        return self.bounds[3] - self.bounds[2]

    @property
    def diagonal(self) -> float:
        """Length of the bounds diagonal"""
        return float(np.hypot(self.width, self.height))

    @property
    def shorter_side(self) -> float:
        """Length of the shorter side of the bounds"""
        return min(self.width, self.height)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Mask of points inside the bounds (edges included)"""
        points = np.atleast_2d(points)
        xmin, xmax, ymin, ymax = self.bounds
        return (
            (points[:, 0] >= xmin)
            & (points[:, 0] <= xmax)
            & (points[:, 1] >= ymin)
            & (points[:, 1] <= ymax)
        )

    def is_free(self, points: np.ndarray) -> np.ndarray:
        """Mask of points inside the bounds and outside obstacles"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.occupancy is None:
            return self.contains(points)
        return self.occupancy.is_free(points)

    def sample_free(self, stream: np.random.Generator) -> np.ndarray:
        """Uniformly random free position

        Raises:
            WeakPosError: RetryExhausted if no free point is found
        """
        xmin, xmax, ymin, ymax = self.bounds
        for _ in range(RETRY_CAP):
            point = stream.uniform((xmin, ymin), (xmax, ymax))
            if self.is_free(point)[0]:
                return point
        raise WeakPosError(
            ErrorKind.RETRY_EXHAUSTED, f"No free position after {RETRY_CAP} draws"
        )

    def to_file(self) -> EnvironmentFile:
        """Serializable document of the environment"""
        xmin, xmax, ymin, ymax = self.bounds
        occupancy = None
        if self.occupancy is not None:
            grid = self.occupancy
            occupancy = OccupancyInfo(
                rows=grid.rows,
                cols=grid.cols,
                cell_size=grid.cell_size,
                origin=grid.origin,
                cells=grid.cells.astype(int).ravel().tolist(),
            )
        return EnvironmentFile(
            bounds=Bounds(xmin=xmin, xmax=xmax, ymin=ymin, ymax=ymax),
            landmarks=[tuple(point) for point in self.landmarks.tolist()],
            occupancy=occupancy,
            seed=self.seed,
        )

    @staticmethod
    def from_file(document: EnvironmentFile) -> "Environment2D":
        """Build an environment from its document"""
        occupancy = None
        if document.occupancy is not None:
            info = document.occupancy
            occupancy = OccupancyGrid(
                rows=info.rows,
                cols=info.cols,
                cell_size=info.cell_size,
                origin=info.origin,
                cells=np.asarray(info.cells, dtype=bool),
            )
        return Environment2D(
            bounds=document.bounds.as_tuple(),
            landmarks=np.asarray(document.landmarks, dtype=float).reshape(-1, 2),
            occupancy=occupancy,
            seed=document.seed,
        )


def save_environment(env: Environment2D, path: Union[str, Path]) -> None:
    """Write the environment as a JSON document"""
    Path(path).write_text(env.to_file().model_dump_json(), encoding="utf-8")


def load_environment(path: Union[str, Path]) -> Environment2D:
    """Read an environment JSON document

    Raises:
        WeakPosError: SchemaMismatch if the document version is unknown
    """
    document = EnvironmentFile.model_validate_json(
        Path(path).read_text(encoding="utf-8")
    )
    if document.schema_version != ENVIRONMENT_SCHEMA_VERSION:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Unsupported environment schema {document.schema_version}",
        )
    return Environment2D.from_file(document)


def _traverse(
    grid: OccupancyGrid,
    origins: np.ndarray,
    directions: np.ndarray,
    limits: np.ndarray,
) -> np.ndarray:
    """Grid walk of many rays at once

    Returns the distance at which each ray enters its first occupied cell, or
    its limit if none is entered before it. When a ray crosses a cell corner
    exactly, both side neighbours count as touched.
    """
    size = grid.cell_size
    local = (origins - np.asarray(grid.origin)) / size
    cell = np.floor(local).astype(np.int64)
    cell[:, 0] = np.clip(cell[:, 0], 0, grid.cols - 1)
    cell[:, 1] = np.clip(cell[:, 1], 0, grid.rows - 1)
    step = np.where(directions >= 0.0, 1, -1)
    magnitude = np.abs(directions)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(magnitude > 0.0, size / magnitude, np.inf)
        offset = np.where(step > 0, cell + 1 - local, local - cell)
        t_next = np.where(magnitude > 0.0, offset * delta, np.inf)

    result = np.array(limits, dtype=float)
    active = np.arange(len(origins))
    while active.size:
        t_x = t_next[active, 0]
        t_y = t_next[active, 1]
        t = np.minimum(t_x, t_y)
        going = t < result[active]
        active, t_x, t_y, t = active[going], t_x[going], t_y[going], t[going]
        if not active.size:
            break

        move_x = t_x <= t_y
        move_y = t_y <= t_x
        hit = np.zeros(active.size, dtype=bool)
        corner = move_x & move_y
        if corner.any():
            rays = active[corner]
            side_x = cell[rays] + np.column_stack([step[rays, 0], np.zeros_like(rays)])
            side_y = cell[rays] + np.column_stack([np.zeros_like(rays), step[rays, 1]])
            hit[corner] = grid.occupied_at(side_x) | grid.occupied_at(side_y)

        rays_x = active[move_x]
        cell[rays_x, 0] += step[rays_x, 0]
        t_next[rays_x, 0] += delta[rays_x, 0]
        rays_y = active[move_y]
        cell[rays_y, 1] += step[rays_y, 1]
        t_next[rays_y, 1] += delta[rays_y, 1]

        inside = grid.in_grid(cell[active])
        hit |= grid.occupied_at(cell[active])
        result[active[hit]] = t[hit]
        active = active[~hit & inside]
    return result


def ray_cast_many(
    grid: OccupancyGrid,
    origins: np.ndarray,
    directions: np.ndarray,
    max_range: Union[float, np.ndarray],
) -> np.ndarray:
    """Vectorized ray_cast over rows of origins and unit directions

    Raises:
        WeakPosError: OutOfBounds, OriginOccupied or NonUnitDirection
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if origins.shape != directions.shape:
        origins = np.broadcast_to(origins, directions.shape)
    limits = np.broadcast_to(np.asarray(max_range, dtype=float), len(origins))
    if (limits <= 0).any():
        raise ValueError("max_range must be positive")
    norms = np.linalg.norm(directions, axis=1)
    if (np.abs(norms - 1.0) > DIRECTION_TOLERANCE).any():
        raise WeakPosError(
            ErrorKind.NON_UNIT_DIRECTION, "Ray direction must have unit norm"
        )
    origin_cells = grid.cell_of(origins)
    if grid.occupied_at(origin_cells).any():
        raise WeakPosError(
            ErrorKind.ORIGIN_OCCUPIED, "Ray origin is inside an obstacle"
        )
    return _traverse(grid, origins, directions, limits)


def ray_cast(
    grid: OccupancyGrid,
    origin: np.ndarray,
    direction: np.ndarray,
    max_range: float,
) -> float:
    """
    Distance from origin to the first occupied cell along a ray

    Args:
        grid: occupancy grid
        origin: ray start inside a free cell
        direction: unit direction
        max_range: range cap
    Returns:
        float: distance to the first occupied-cell boundary, or max_range
    Raises:
        WeakPosError: OutOfBounds, OriginOccupied or NonUnitDirection
    """
    return float(ray_cast_many(grid, origin, direction, max_range)[0])


def segment_clear(
    grid: Optional[OccupancyGrid], p: np.ndarray, q: np.ndarray
) -> bool:
    """
    Check that the straight segment pq only crosses free cells

    Args:
        grid: occupancy grid, None for obstacle-free worlds
        p: first endpoint
        q: second endpoint
    Returns:
        bool: True if every cell touched by pq is free
    Raises:
        WeakPosError: OutOfBounds if an endpoint is outside the footprint
    """
    if grid is None:
        return True
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    ends = grid.cell_of(np.vstack([p, q]))
    if grid.occupied_at(ends).any():
        return False
    length = float(np.linalg.norm(q - p))
    if length == 0.0:
        return True
    direction = ((q - p) / length)[None, :]
    reached = _traverse(grid, p[None, :], direction, np.array([length]))
    return bool(reached[0] >= length)


def generate_landmark_env(bounds: BoundsLike, count: int, seed: int) -> Environment2D:
    """
    Open world with landmarks drawn uniformly inside the bounds

    Args:
        bounds: world rectangle
        count: number of landmarks M
        seed: seed of the landmark stream
    Returns:
        Environment2D: landmark world without occupancy
    """
    if count < 1:
        raise ValueError("Need at least one landmark")
    xmin, xmax, ymin, ymax = _as_bounds(bounds)
    stream = np.random.default_rng(seed)
    landmarks = stream.uniform((xmin, ymin), (xmax, ymax), size=(count, 2))
    return Environment2D(
        bounds=(xmin, xmax, ymin, ymax), landmarks=landmarks, seed=seed
    )


def _connected(cells: np.ndarray) -> bool:
    # default structuring element is the 4-neighbourhood cross
    _, components = ndimage.label(~cells)
    return components == 1


def generate_room_env(spec: RoomSpec, seed: int) -> Environment2D:
    """
    Occupancy-grid room with a boundary wall and rectangular obstacles

    Random obstacles that would disconnect the free space are redrawn.

    Args:
        spec: room layout
        seed: seed of the obstacle stream
    Returns:
        Environment2D: room without landmarks
    Raises:
        WeakPosError: DisconnectedFreeSpace if the explicit layout splits the room
    """
    cells = np.zeros((spec.rows, spec.cols), dtype=bool)
    cells[0, :] = cells[-1, :] = True
    cells[:, 0] = cells[:, -1] = True
    for block in spec.obstacles:
        rows = slice(block.row, block.row + block.height)
        cols = slice(block.col, block.col + block.width)
        cells[rows, cols] = True
    if not _connected(cells):
        raise WeakPosError(
            ErrorKind.DISCONNECTED_FREE_SPACE, "Room free space is not connected"
        )

    stream = np.random.default_rng(seed)
    low, high = spec.obstacle_size
    for index in range(spec.random_obstacles):
        for _ in range(RETRY_CAP):
            height, width = stream.integers(low, high + 1, size=2)
            if height >= spec.rows - 2 or width >= spec.cols - 2:
                continue
            row = int(stream.integers(1, spec.rows - height))
            col = int(stream.integers(1, spec.cols - width))
            candidate = cells.copy()
            candidate[row : row + height, col : col + width] = True
            if _connected(candidate):
                cells = candidate
                break
        else:
            logger.warning("Random obstacle %d skipped: no connected placement", index)

    x0, y0 = spec.origin
    grid = OccupancyGrid(
        rows=spec.rows,
        cols=spec.cols,
        cell_size=spec.cell_size,
        origin=(x0, y0),
        cells=cells,
    )
    logger.debug("Room %dx%d with %d free cells", spec.rows, spec.cols, grid.free_count)
    return Environment2D(
        bounds=grid.footprint, landmarks=np.empty((0, 2)), occupancy=grid, seed=seed
    )
