"""Cell decomposition of the scene, field-of-view geometry, and admissible placements.

The scene is tiled by a rectangular grid of equally sized cells. Fields of
view are unions of whole cells, so every cell is either wholly covered or
wholly outside any FoV. Measurement-space cells coincide with position-space
cells because the sensor extracts position directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CellGrid:
    """Tessellation of the scene rectangle into n_cols x n_rows cells.

    Cell indices are row-major: j = row * n_cols + col. The ROI mask marks
    cells that can contain objects; the FoR mask marks cells reachable by
    the sensor. The masks are independent.
    """

    origin: tuple[float, float]
    cell_size: tuple[float, float]
    n_cols: int
    n_rows: int
    roi_mask: np.ndarray = field(default=None)
    for_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError("grid must have at least one cell per axis")
        if self.cell_size[0] <= 0 or self.cell_size[1] <= 0:
            raise ValueError("cell size must be positive")
        for name in ("roi_mask", "for_mask"):
            mask = getattr(self, name)
            if mask is None:
                mask = np.ones(self.n_cells, dtype=bool)
            else:
                mask = np.asarray(mask, dtype=bool).reshape(self.n_cells)
            object.__setattr__(self, name, mask)
        rows, cols = np.divmod(np.arange(self.n_cells), self.n_cols)
        los = np.column_stack([self.origin[0] + cols * self.cell_size[0],
                               self.origin[1] + rows * self.cell_size[1]])
        object.__setattr__(self, "_cell_los", los)
        object.__setattr__(self, "_cell_his", los + np.asarray(self.cell_size))

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def cell_area(self) -> float:
        return self.cell_size[0] * self.cell_size[1]

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin, dtype=float)
        hi = lo + np.array([self.n_cols * self.cell_size[0],
                            self.n_rows * self.cell_size[1]])
        return lo, hi

    def check_cell(self, j: int) -> None:
        if not 0 <= j < self.n_cells:
            raise ValueError(f"cell index {j} outside grid with {self.n_cells} cells")

    def cell_bounds(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        self.check_cell(j)
        return self._cell_los[j], self._cell_his[j]

    def cell_center(self, j: int) -> np.ndarray:
        lo, hi = self.cell_bounds(j)
        return 0.5 * (lo + hi)

    def cell_of(self, point) -> int:
        """Cell index containing a point; edges belong to the cell they open
        (left/top closed). Points on the outer right/bottom boundary map to
        the last cell of that axis."""
        point = np.asarray(point, dtype=float)
        lo, hi = self.extent
        if np.any(point < lo) or np.any(point > hi):
            raise ValueError(f"point {point.tolist()} outside grid bounds")
        col = min(int((point[0] - lo[0]) // self.cell_size[0]), self.n_cols - 1)
        row = min(int((point[1] - lo[1]) // self.cell_size[1]), self.n_rows - 1)
        return row * self.n_cols + col

    def cells_of(self, points: np.ndarray) -> np.ndarray:
        """Vectorized cell_of for an (n, 2) array of in-bounds points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo, _ = self.extent
        cols = np.minimum(((points[:, 0] - lo[0]) // self.cell_size[0]).astype(int),
                          self.n_cols - 1)
        rows = np.minimum(((points[:, 1] - lo[1]) // self.cell_size[1]).astype(int),
                          self.n_rows - 1)
        return rows * self.n_cols + cols

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        lo, hi = self.extent
        return bool(np.all(point >= lo) and np.all(point <= hi))

    def cell_lattice(self, j: int, shape: tuple[int, int]) -> np.ndarray:
        """Uniform midpoint lattice of shape (nx, ny) inside cell j, row-major
        in x then y, returned as an (nx*ny, 2) array."""
        lo, hi = self.cell_bounds(j)
        nx, ny = shape
        xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
        ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def lattice_interior_mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Boolean mask over a cell lattice that is False on the boundary ring."""
        nx, ny = shape
        mask = np.zeros((nx, ny), dtype=bool)
        if nx > 2 and ny > 2:
            mask[1:-1, 1:-1] = True
        return mask.ravel()


@dataclass(frozen=True)
class Fov:
    """Cell-aligned field of view: anchor cell plus extent in whole cells."""

    col: int
    row: int
    width_cells: int
    height_cells: int

    def __post_init__(self):
        if self.width_cells < 1 or self.height_cells < 1:
            raise ValueError("FoV extent must be at least one cell")
        if self.col < 0 or self.row < 0:
            raise ValueError("FoV anchor must be non-negative")

    def cells(self, grid: CellGrid) -> np.ndarray:
        """Row-major indices of the cells covered by this FoV."""
        if (self.col + self.width_cells > grid.n_cols
                or self.row + self.height_cells > grid.n_rows):
            raise ValueError(f"FoV {self} exceeds grid bounds")
        cols = np.arange(self.col, self.col + self.width_cells)
        rows = np.arange(self.row, self.row + self.height_cells)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        return (rr * grid.n_cols + cc).ravel()

    def bounds(self, grid: CellGrid) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([grid.origin[0] + self.col * grid.cell_size[0],
                       grid.origin[1] + self.row * grid.cell_size[1]])
        hi = lo + np.array([self.width_cells * grid.cell_size[0],
                            self.height_cells * grid.cell_size[1]])
        return lo, hi

    def area(self, grid: CellGrid) -> float:
        return self.width_cells * self.height_cells * grid.cell_area

    def contains_point(self, grid: CellGrid, point) -> bool:
        lo, hi = self.bounds(grid)
        point = np.asarray(point, dtype=float)
        return bool(np.all(point >= lo) and np.all(point <= hi))


def fov_cells(grid: CellGrid, fov: Fov) -> np.ndarray:
    return fov.cells(grid)


def admissible_fovs(grid: CellGrid, fov_shape: tuple[int, int]) -> list[Fov]:
    """All placements of a fov_shape = (width, height) window whose cells all
    lie inside the FoR mask, in row-major anchor order."""
    w, h = fov_shape
    if w > grid.n_cols or h > grid.n_rows:
        raise ValueError(f"FoV shape {fov_shape} does not fit the grid")
    for_mask = grid.for_mask.reshape(grid.n_rows, grid.n_cols)
    placements = []
    for row in range(grid.n_rows - h + 1):
        for col in range(grid.n_cols - w + 1):
            if for_mask[row:row + h, col:col + w].all():
                placements.append(Fov(col, row, w, h))
    return placements
