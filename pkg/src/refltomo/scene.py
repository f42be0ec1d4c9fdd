"""Grids, acquisition geometry, frequency schedules, and synthetic scenes.

Defines the domain types shared by every other module (Grid, AcquisitionGeometry,
FrequencySchedule, ContrastImage) together with builders for

* the default reflection acquisition (five collocated transmitter/receiver
  pairs on a line below the object),
* the three-band frequency schedule (47 frequencies, 10 MHz - 2 GHz),
* three synthetic phantoms (brain-like, layered underground, high-resolution
  pipes) and a single-cylinder demo scene,
* nearest-neighbor resampling between grids.

All scenes live on the 1 m x 1 m square [-0.5, 0.5]^2, discretized at cell
centers.  Cell enumeration is column-major with y fastest: the cell at integer
coordinates (ix, iy) has flat index ``ix * ny + iy``.  Every module relies on
this order.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# frozen scene constants
#
# The published descriptions fix only contrast values and a few diameters; the
# remaining geometry below is frozen here so that every regression test is
# deterministic.  Ellipses are (value, xc, yc, a, b, angle_deg) in phantom
# coordinates [-1, 1]^2 (twice the domain coordinates), painted in order with
# later entries overwriting earlier ones.  The second ellipse (brain interior)
# uses axes (0.60, 0.82) so the outer value-1 ring is at least one cell wide
# on every grid with n >= 8.
# ---------------------------------------------------------------------------

_SHEPP_ELLIPSES = (
    (1.0, 0.0, 0.0, 0.69, 0.92, 0.0),
    (0.2, 0.0, -0.0184, 0.60, 0.82, 0.0),
    (0.0, 0.22, 0.0, 0.11, 0.31, -18.0),
    (0.0, -0.22, 0.0, 0.16, 0.41, 18.0),
    (0.3, 0.0, 0.35, 0.21, 0.25, 0.0),
    (0.3, 0.0, 0.1, 0.046, 0.046, 0.0),
    (0.3, 0.0, -0.1, 0.046, 0.046, 0.0),
    (0.3, -0.08, -0.605, 0.046, 0.023, 0.0),
    (0.3, 0.0, -0.606, 0.023, 0.023, 0.0),
    (0.3, 0.06, -0.605, 0.023, 0.046, 0.0),
)

# layered scene: five 0.2 m horizontal bands, contrasts bottom -> top
_LAYER_VALUES = (0.1, 0.2, 0.3, 0.4, 0.5)
_LAYER_EDGES = (-0.3, -0.1, 0.1, 0.3)
_RHOMBUS_HALF_DIAG = 0.35   # |x| + |y| <= 0.35, contrast 1
_HOLE_HALF_SIDE = 0.1       # |x|, |y| <= 0.1 inside the rhombus, contrast 0

# pipes scene: three equal layers (edges at +-1/6) and two annular pipes,
# (xc, yc, outer radius, wall thickness, interior contrast); wall contrast 0.8
_PIPE_LAYER_VALUES = (0.05, 0.1235, 0.5)
_PIPES = (
    (-0.2, -0.1, 0.20, 0.06, 1.0),
    (0.22, 0.15, 0.12, 0.05, 0.0),
)
_PIPE_WALL_VALUE = 0.8

_CYLINDER_RADIUS_M = 0.15

_SENSOR_LINE_Y_M = -0.6
_DOMAIN_HALF_WIDTH_M = 0.5


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Regular rectangular grid of cell centers.

    Attributes
    ----------
    nx, ny : int
        Cell counts in x and y; both at least 2.
    dx, dy : float
        Cell sizes in meters, positive.
    x0, y0 : float
        Coordinates (m) of the lower-left cell center.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float
    y0: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs nx, ny >= 2")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("grid needs dx, dy > 0")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_index(self, ix: int, iy: int) -> int:
        """Flat index of cell (ix, iy); column-major, y fastest."""
        return ix * self.ny + iy

    def cell_coords(self, index: int):
        """Inverse of :meth:`cell_index`."""
        return divmod(index, self.ny)

    def cell_centers(self) -> np.ndarray:
        """(N, 2) array of cell-center coordinates in enumeration order."""
        xs = self.x0 + self.dx * np.arange(self.nx)
        ys = self.y0 + self.dy * np.arange(self.ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def bounding_box(self):
        """(xmin, xmax, ymin, ymax) of the covered area (cell extents)."""
        return (self.x0 - self.dx / 2, self.x0 + (self.nx - 0.5) * self.dx,
                self.y0 - self.dy / 2, self.y0 + (self.ny - 0.5) * self.dy)


def square_grid(n: int) -> Grid:
    """n x n grid of cell centers covering the square [-0.5, 0.5]^2 (m)."""
    d = 1.0 / n
    return Grid(nx=n, ny=n, dx=d, dy=d, x0=-0.5 + d / 2, y0=-0.5 + d / 2)


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Transmitter and receiver positions (m), each an (n, 2) array.

    All positions must lie outside the object grid; builders place them on the
    line y = -0.6 m while the object occupies [-0.5, 0.5]^2.
    """

    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tx", np.atleast_2d(np.asarray(self.tx, dtype=float)))
        object.__setattr__(self, "rx", np.atleast_2d(np.asarray(self.rx, dtype=float)))
        if self.tx.shape[0] < 1 or self.rx.shape[0] < 1:
            raise ValueError("need at least one transmitter and one receiver")

    @property
    def n_tx(self) -> int:
        return self.tx.shape[0]

    @property
    def n_rx(self) -> int:
        return self.rx.shape[0]


@dataclass(frozen=True)
class FrequencySchedule:
    """Strictly increasing positive frequencies (Hz).

    Wavenumbers derive exactly as k = 2 pi nu / c with c the vacuum light
    speed.
    """

    freqs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=float))
        if self.freqs.ndim != 1 or self.freqs.size == 0:
            raise ValueError("schedule must be a nonempty 1-D sequence")
        if np.any(self.freqs <= 0):
            raise ValueError("frequencies must be positive")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def n_freq(self) -> int:
        return self.freqs.size

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * self.freqs / SPEED_OF_LIGHT

    def subset(self, indices) -> "FrequencySchedule":
        """Schedule restricted to the given sorted index sequence."""
        return FrequencySchedule(self.freqs[np.asarray(indices, dtype=int)])


@dataclass
class ContrastImage:
    """Real contrast map f on a grid, stored flat in enumeration order."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_cells:
            raise ValueError("value count does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("contrast values must be finite")

    def values_2d(self) -> np.ndarray:
        """Image as an (nx, ny) array indexed [ix, iy]."""
        return self.values.reshape(self.grid.nx, self.grid.ny)

    def copy(self) -> "ContrastImage":
        return ContrastImage(self.grid, self.values.copy())


# ---------------------------------------------------------------------------
# acquisition and frequency builders
# ---------------------------------------------------------------------------

def default_acquisition() -> AcquisitionGeometry:
    """Five collocated transmitter/receiver pairs on the line y = -0.6 m.

    The x positions are equispaced on [-0.5, 0.5]: {-0.5, -0.25, 0, 0.25, 0.5}.
    """
    x = np.linspace(-_DOMAIN_HALF_WIDTH_M, _DOMAIN_HALF_WIDTH_M, 5)
    pos = np.column_stack([x, np.full(5, _SENSOR_LINE_Y_M)])
    return AcquisitionGeometry(tx=pos, rx=pos.copy())


def frequency_bands() -> FrequencySchedule:
    """The three-band schedule: 47 frequencies between 10 MHz and 2000 MHz.

    Union of {10 + 5j} MHz (j = 0..17), {100 + 50j} MHz (j = 0..17) and
    {1000 + 100j} MHz (j = 0..10), deduplicated and ascending.
    """
    low = 10e6 + 5e6 * np.arange(18)
    mid = 100e6 + 50e6 * np.arange(18)
    high = 1000e6 + 100e6 * np.arange(11)
    freqs = np.unique(np.concatenate([low, mid, high]))
    return FrequencySchedule(freqs)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

def _painted_ellipse_values(grid: Grid, ellipses) -> np.ndarray:
    """Rasterize painted ellipses (phantom coordinates = 2x domain coords)."""
    centers = grid.cell_centers()
    px, py = 2.0 * centers[:, 0], 2.0 * centers[:, 1]
    values = np.zeros(grid.n_cells)
    for val, xc, yc, a, b, ang in ellipses:
        t = np.deg2rad(ang)
        ex = px - xc
        ey = py - yc
        xr = ex * np.cos(t) + ey * np.sin(t)
        yr = -ex * np.sin(t) + ey * np.cos(t)
        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        values[inside] = val
    return values


def shepp_logan_phantom(n: int, fmax: float) -> ContrastImage:
    """Brain-like phantom with contrast value set {0, 0.2, 0.3, 1} * fmax.

    Parameters
    ----------
    n : int
        Grid resolution (n x n), at least 8 so the outer ring is resolved.
    fmax : float
        Scale applied to the unit phantom (unit maximum is 1).
    """
    if n < 8:
        raise ValueError("shepp_logan_phantom needs n >= 8")
    grid = square_grid(n)
    values = _painted_ellipse_values(grid, _SHEPP_ELLIPSES) * fmax
    return ContrastImage(grid, np.maximum(values, 0.0))


def layered_phantom(n: int, fmax: float) -> ContrastImage:
    """Underground scene: five layers 0.1-0.5, rhombus of contrast 1, hole of 0."""
    grid = square_grid(n)
    centers = grid.cell_centers()
    x, y = centers[:, 0], centers[:, 1]
    band = np.zeros(grid.n_cells, dtype=int)
    for edge in _LAYER_EDGES:
        band += y >= edge
    values = np.asarray(_LAYER_VALUES)[band]
    rhombus = np.abs(x) + np.abs(y) <= _RHOMBUS_HALF_DIAG
    values[rhombus] = 1.0
    hole = rhombus & (np.abs(x) <= _HOLE_HALF_SIDE) & (np.abs(y) <= _HOLE_HALF_SIDE)
    values[hole] = 0.0
    return ContrastImage(grid, values * fmax)


def pipes_phantom(n: int, fmax: float) -> ContrastImage:
    """High-resolution underground scene: three layers and two annular pipes.

    Layer contrasts {0.05, 0.1235, 0.5}; pipe outer diameters 0.4 m and
    0.24 m; the large pipe interior has contrast 1, the small one is vacuum.
    """
    grid = square_grid(n)
    centers = grid.cell_centers()
    x, y = centers[:, 0], centers[:, 1]
    band = (y >= -1.0 / 6.0).astype(int) + (y >= 1.0 / 6.0)
    values = np.asarray(_PIPE_LAYER_VALUES)[band]
    for xc, yc, r_outer, wall, interior in _PIPES:
        r = np.hypot(x - xc, y - yc)
        values[r <= r_outer] = _PIPE_WALL_VALUE
        values[r <= r_outer - wall] = interior
    return ContrastImage(grid, values * fmax)


def cylinder_scene(c: float, n: int = 16) -> ContrastImage:
    """Centered disk of radius 0.15 m and constant contrast c on zero background."""
    if c < 0:
        raise ValueError("cylinder contrast must be nonnegative")
    grid = square_grid(n)
    centers = grid.cell_centers()
    r = np.hypot(centers[:, 0], centers[:, 1])
    return ContrastImage(grid, np.where(r <= _CYLINDER_RADIUS_M, float(c), 0.0))


def resample_nearest(img: ContrastImage, n_new: int) -> ContrastImage:
    """Nearest-neighbor resample onto an n_new x n_new grid of the same square.

    Never invents values: each new cell copies the old cell containing its
    center, so the value set is preserved and integer up/down round trips are
    exact.
    """
    if n_new < 2:
        raise ValueError("resample_nearest needs n_new >= 2")
    old = img.values_2d()

    def _src(n_old):
        # source index of each new cell center, clipped to the valid range
        idx = ((np.arange(n_new) + 0.5) * n_old) // n_new
        return np.minimum(idx.astype(int), n_old - 1)

    new = old[np.ix_(_src(img.grid.nx), _src(img.grid.ny))]
    return ContrastImage(square_grid(n_new), new.ravel())
