"""2-D free-space Green kernel and per-frequency scattering operators.

Builds, for one frequency at a time,

* the domain operator G (cell-to-cell kernel, applied matrix-free through a
  zero-padded 2-D FFT convolution of the block-Toeplitz kernel, with a
  conjugate-transpose action),
* the receiver matrix H (cell-to-receiver kernel, no k^2 factor),
* the incident fields V radiated by point transmitters.

The kernel is g(r) = -(i/4) H0^(2)(k r) with H0^(2) the zero-order Hankel
function of the second kind.  The singular self-cell entry of G is the
analytic integral of g over the disk with the same area as one cell.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import hankel2

from .scene import SPEED_OF_LIGHT, AcquisitionGeometry, FrequencySchedule, Grid

logger = logging.getLogger(__name__)

# dense assembly is permitted only at oracle scale
_DENSE_LIMIT = 32 * 32

# sensors sitting exactly on a cell center make the kernel singular
_COINCIDENCE_TOL_M = 1e-9


def hankel_h0_2(z: float) -> complex:
    """Zero-order Hankel function of the second kind, J0(z) - i Y0(z).

    Parameters
    ----------
    z : float
        Argument, strictly positive.
    """
    if np.any(np.asarray(z) <= 0):
        raise ValueError("hankel_h0_2 requires z > 0")
    return hankel2(0, z)


def green_kernel_2d(k: float, rho) -> complex:
    """Radial 2-D kernel -(i/4) H0^(2)(k rho) for rho > 0.

    rho = 0 is rejected; the singular cell integral is handled by
    :func:`self_cell_coefficient`.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("green_kernel_2d requires rho > 0; "
                         "use self_cell_coefficient for the singular cell")
    return -0.25j * hankel2(0, k * rho)


def self_cell_coefficient(k: float, dx: float, dy: float) -> complex:
    """Integral of the kernel over the equivalent-area disk of one cell.

    For a disk of radius a = sqrt(dx dy / pi) centered on the singularity,

        int_disk g dA = -(i pi a / (2k)) H1^(2)(k a) - 1 / k^2,

    which regularizes the diagonal of the discretized domain operator.
    """
    if k <= 0 or dx <= 0 or dy <= 0:
        raise ValueError("self_cell_coefficient requires k, dx, dy > 0")
    a = np.sqrt(dx * dy / np.pi)
    return -(1j * np.pi * a / (2.0 * k)) * hankel2(1, k * a) - 1.0 / k**2


@dataclass(frozen=True)
class SourceSpec:
    """Per-transmitter complex amplitude; flat spectrum (same q at every frequency)."""

    q: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not np.isfinite(self.q):
            raise ValueError("source amplitude must be finite")

    def amplitudes(self, n_tx: int) -> np.ndarray:
        return np.full(n_tx, complex(self.q))


@dataclass
class GreenOperators:
    """Per-frequency operators of the discrete scattering model.

    Attributes
    ----------
    freq_index : int
        Position of this frequency in its schedule.
    k : float
        Wavenumber (rad/m).
    grid : Grid
        Object grid the operators act on.
    H : np.ndarray
        Complex (n_r, N) receiver matrix.
    V : np.ndarray
        Complex (N, n_t) incident fields.
    """

    freq_index: int
    k: float
    grid: Grid
    H: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    _kernel_fft: np.ndarray = field(repr=False)
    _pad_shape: tuple
    _dense_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    # -- domain operator -----------------------------------------------------

    def apply_G(self, x: np.ndarray) -> np.ndarray:
        """G x via zero-padded FFT convolution; accepts (N,) or (N, m)."""
        nx, ny = self.grid.nx, self.grid.ny
        squeeze = x.ndim == 1
        cols = x.reshape(nx, ny, -1)
        spec = np.fft.fft2(cols, s=self._pad_shape, axes=(0, 1))
        out = np.fft.ifft2(spec * self._kernel_fft[:, :, None], axes=(0, 1))
        out = out[:nx, :ny, :].reshape(nx * ny, -1)
        return out[:, 0] if squeeze else out

    def apply_GH(self, x: np.ndarray) -> np.ndarray:
        """Conjugate-transpose action; G is complex symmetric, so G^H x = conj(G conj(x))."""
        return np.conj(self.apply_G(np.conj(x)))

    def dense_G(self) -> np.ndarray:
        """Explicit (N, N) domain matrix; only allowed at oracle scale.

        Memoized (the matrix is contrast-independent); treat the result as
        read-only.
        """
        n = self.grid.n_cells
        if n > _DENSE_LIMIT:
            raise ValueError("dense assembly restricted to grids of at most 32x32")
        if self._dense_cache is None:
            self._dense_cache = self.apply_G(np.eye(n, dtype=complex))
        return self._dense_cache

    @property
    def n_rx(self) -> int:
        return self.H.shape[0]

    @property
    def n_tx(self) -> int:
        return self.V.shape[1]

    @property
    def freq_hz(self) -> float:
        return self.k * SPEED_OF_LIGHT / (2.0 * np.pi)


def _toeplitz_kernel_fft(grid: Grid, k: float):
    """FFT of the padded displacement kernel k^2 * int_cell g, wrap-around layout."""
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    ix = np.arange(-(nx - 1), nx)
    iy = np.arange(-(ny - 1), ny)
    rho = np.hypot.outer(ix * dx, iy * dy)
    kernel = np.empty(rho.shape, dtype=complex)
    nonzero = rho > 0
    kernel[nonzero] = k**2 * green_kernel_2d(k, rho[nonzero]) * dx * dy
    kernel[nx - 1, ny - 1] = k**2 * self_cell_coefficient(k, dx, dy)
    pad = (2 * nx, 2 * ny)
    padded = np.zeros(pad, dtype=complex)
    # displacement d goes to slot d mod pad, so index arithmetic wraps correctly
    padded[np.mod(ix, pad[0])[:, None], np.mod(iy, pad[1])[None, :]] = kernel
    return np.fft.fft2(padded), pad


def build_green_operators(grid: Grid, acq: AcquisitionGeometry,
                          sched: FrequencySchedule, j: int,
                          src: SourceSpec = SourceSpec()) -> GreenOperators:
    """Assemble the frequency-j operators (G matrix-free, H and V dense).

    Off-diagonal G entries are k^2 g(|r_m - r_n|) dx dy with the diagonal from
    :func:`self_cell_coefficient`.  H entries are g(|x_l - r_n|) dx dy (no k^2
    factor), and each incident-field column is v_m = k^2 g(|r_m - r_t|) q for a
    point transmitter at r_t.

    Raises
    ------
    ValueError
        If a transmitter or receiver coincides with a grid cell center.
    """
    k = float(sched.wavenumbers[j])
    centers = grid.cell_centers()
    dxdy = grid.dx * grid.dy

    def _distances(points):
        d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        if np.min(d) < _COINCIDENCE_TOL_M:
            raise ValueError("transmitter/receiver coincides with a grid cell center")
        return d

    H = green_kernel_2d(k, _distances(acq.rx)) * dxdy
    q = src.amplitudes(acq.n_tx)
    V = (k**2 * green_kernel_2d(k, _distances(acq.tx)) * q[:, None]).T.copy()

    kernel_fft, pad = _toeplitz_kernel_fft(grid, k)
    return GreenOperators(freq_index=j, k=k, grid=grid, H=H, V=V,
                          _kernel_fft=kernel_fft, _pad_shape=pad)


def build_all_operators(grid: Grid, acq: AcquisitionGeometry,
                        sched: FrequencySchedule,
                        src: SourceSpec = SourceSpec()):
    """List of GreenOperators for every frequency in the schedule."""
    return [build_green_operators(grid, acq, sched, j, src)
            for j in range(sched.n_freq)]
