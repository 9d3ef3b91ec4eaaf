"""Split-operator propagation of the density in symmetric/antisymmetric coordinates.

The density is stored as ``rho(r, y) = <r - y/2| rho |r + y/2>``. The ``r`` axis
runs in natural order over ``[-L_r, L_r)``; the ``y`` axis is stored in FFT
order so that ``y = 0`` sits at index 0 and ``-y_j`` at index ``(-j) mod n_y``.
Arrays may carry leading trajectory axes: ``values.shape == (..., n_r, n_y)``.

In these coordinates the generator splits into
  kinetic      -i d_r d_y                    (diagonal in Fourier space)
  potential    -i [V(r - y/2) - V(r + y/2)]  (diagonal, includes noise and kappa)
  decoherence  -(gamma lambda^2 / beta) y^2  (diagonal)
  friction     -gamma lambda^2 y d_y         (exact rescaling of y)
The last three are integrated together exactly along the friction
characteristics; the kinetic part is split symmetrically around them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft

from .protocol import Controls
from .reservoir import ReservoirSpec


class GridOverflowError(RuntimeError):
    """Density leaked into the outer frame of the grid."""


def _periodic_kernel(u, n: int, half_extent: float) -> np.ndarray:
    # band-limited interpolation kernel of an n-point periodic grid, Nyquist term as a cosine
    # closed form of (1 + 2 sum_{k<n/2} cos k th + cos (n/2) th) / n = sin(n th/2) cot(th/2) / n
    th = (math.pi / half_extent) * np.asarray(u, dtype=float)
    s = np.sin(0.5 * th)
    near = np.abs(s) < 1e-12
    safe = np.where(near, 1.0, s)
    out = np.sin(0.5 * n * th) * np.cos(0.5 * th) / (n * safe)
    return np.where(near, 1.0, out)


@dataclass(frozen=True)
class GridSpec:
    n_r: int = 128
    n_y: int = 128
    L_r: float = 12.0
    L_y: float = 12.0
    frame: float = 0.1
    r: np.ndarray = field(init=False, repr=False, compare=False)
    y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for n in (self.n_r, self.n_y):
            if n < 8 or n & (n - 1):
                raise ValueError(f"grid sizes must be powers of two >= 8, got {n}")
        if self.L_r <= 0 or self.L_y <= 0:
            raise ValueError("grid half-extents must be > 0")
        r = -self.L_r + self.dr * np.arange(self.n_r)
        j = np.arange(self.n_y)
        y = self.dy * np.where(j < self.n_y // 2, j, j - self.n_y)
        for a in (r, y):
            a.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "y", y)

    @property
    def dr(self) -> float:
        return 2.0 * self.L_r / self.n_r

    @property
    def dy(self) -> float:
        return 2.0 * self.L_y / self.n_y

    @property
    def mirror(self) -> np.ndarray:
        """Index of -y_j for every j."""
        return (-np.arange(self.n_y)) % self.n_y

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular wavenumbers with the Nyquist entries zeroed."""
        kr = 2.0 * math.pi * np.fft.fftfreq(self.n_r, self.dr)
        ky = 2.0 * math.pi * np.fft.fftfreq(self.n_y, self.dy)
        kr[self.n_r // 2] = 0.0
        ky[self.n_y // 2] = 0.0
        return kr, ky

    def frame_mask(self) -> np.ndarray:
        rr = np.abs(self.r)[:, None] > (1.0 - self.frame) * self.L_r
        yy = np.abs(self.y)[None, :] > (1.0 - self.frame) * self.L_y
        return rr | yy


@dataclass
class DensityGrid:
    grid: GridSpec
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.values.shape[-2:] != (self.grid.n_r, self.grid.n_y):
            raise ValueError("values do not match the grid shape")

    def trace(self):
        return trace(self.grid, self.values)

    def mean(self) -> "DensityGrid":
        """Ensemble average over all leading trajectory axes."""
        v = self.values.reshape(-1, self.grid.n_r, self.grid.n_y).mean(axis=0)
        return DensityGrid(self.grid, v, self.t)


def gaussian_density(grid: GridSpec, mean_q, mean_p, var_q: float, var_p: float, cov_qp: float) -> np.ndarray:
    """Density of a Gaussian state; ``mean_q``/``mean_p`` may be arrays over trajectories."""
    det = var_q * var_p - cov_qp**2
    if var_q <= 0 or det < 0.25 - 1e-12:
        raise ValueError("covariance violates the uncertainty relation")
    mq = np.asarray(mean_q, dtype=float)[..., None, None]
    mp = np.asarray(mean_p, dtype=float)[..., None, None]
    r = grid.r[:, None]
    y = grid.y[None, :]
    cond_var = var_p - cov_qp**2 / var_q
    dens = np.exp(-0.5 * (r - mq) ** 2 / var_q) / math.sqrt(2.0 * math.pi * var_q)
    phase = -1j * (mp + (cov_qp / var_q) * (r - mq)) * y - 0.5 * cond_var * y * y
    return dens * np.exp(phase)


def trace(grid: GridSpec, values: np.ndarray):
    return grid.dr * values[..., :, 0].sum(axis=-1)


def hermitian_part(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    # mirror y -> -y by slicing (index 0 stays, the rest reverses) instead of fancy indexing
    out = np.empty_like(values)
    out[..., 0] = values[..., 0]
    out[..., 1:] = values[..., :0:-1]
    np.conjugate(out, out=out)
    out += values
    out *= 0.5
    return out


def hermiticity_defect(grid: GridSpec, values: np.ndarray) -> float:
    return float(np.max(np.abs(values - np.conj(values[..., grid.mirror]))))


def boundary_mass(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Integral of |rho| over the outer frame, per trajectory."""
    m = grid.frame_mask()
    return grid.dr * grid.dy * np.abs(values[..., m]).sum(axis=-1)


@lru_cache(maxsize=8)
def _derivative_weights(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    # spectral first and second y-derivatives at y = 0 as weight vectors over the y samples
    n = grid.n_y
    k = 2.0 * math.pi * np.fft.fftfreq(n, grid.dy)
    kn = abs(k[n // 2])
    k1 = k.copy()
    k1[n // 2] = 0.0
    e = np.exp(-1j * np.outer(k, grid.y)) / n
    w1 = (1j * k1) @ e
    k2 = -(k**2)
    k2[n // 2] = -(kn**2)
    w2 = k2 @ e
    return w1, w2


def observables_grid(grid: GridSpec, values: np.ndarray, check: bool = True):
    """Raw moments (<q>, <p>, <q^2>, <p^2>, <qp+pq>/2) of each trajectory."""
    w1, w2 = _derivative_weights(grid)
    r = grid.r
    diag = values[..., :, 0]
    d1 = values @ w1
    d2 = values @ w2
    h = grid.dr
    raw = (
        h * (diag * r).sum(axis=-1),
        h * (1j * d1).sum(axis=-1),
        h * (diag * r * r).sum(axis=-1),
        -h * d2.sum(axis=-1),
        h * (1j * d1 * r).sum(axis=-1),
    )
    if check:
        norm = np.maximum(1.0, np.abs(h * diag.sum(axis=-1)))
        for m in raw[:4]:
            if np.any(np.abs(m.imag) > 1e-8 * norm * max(1.0, float(np.max(np.abs(m.real))))):
                raise FloatingPointError("moment has a non-negligible imaginary part")
    return tuple(m.real for m in raw)


class GridPropagator:
    """Strang step: half kinetic, exact diagonal + friction at midpoint controls, half kinetic."""

    def __init__(self, grid: GridSpec, dt: float, reservoirs: tuple[ReservoirSpec, ReservoirSpec], kappa: float = 0.0):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.grid = grid
        self.dt = float(dt)
        self.cold, self.hot = reservoirs
        self.kappa = float(kappa)
        kr, ky = grid.wavenumbers()
        self._kin_half = np.exp(0.5j * self.dt * np.outer(kr, ky))
        self._kin_full = self._kin_half**2
        self._kin_back = np.conj(self._kin_half)
        self._r = grid.r[:, None]
        self._y = grid.y[None, :]
        self._y2 = self._y**2
        self._y3 = self._y**3
        self._rescale_cache: dict[float, np.ndarray] = {}

    def kinetic_half(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.ifft2(scipy.fft.fft2(values) * self._kin_half)

    def _rescale_matrix(self, s: float) -> np.ndarray:
        key = round(s, 15)
        m = self._rescale_cache.get(key)
        if m is None:
            y = self.grid.y
            m = _periodic_kernel(s * y[:, None] - y[None, :], self.grid.n_y, self.grid.L_y)
            m[0] = 0.0
            m[0, 0] = 1.0
            m = np.ascontiguousarray(m.T).astype(complex)
            if len(self._rescale_cache) > 256:
                self._rescale_cache.clear()
            self._rescale_cache[key] = m
        return m

    def diagonal(self, values: np.ndarray, c: Controls, xi_c, xi_h) -> np.ndarray:
        cold, hot = self.cold, self.hot
        dt = self.dt
        a = cold.gamma * c.lam_c**2 + hot.gamma * c.lam_h**2
        w2 = c.omega**2 + cold.gamma * c.lam_c * c.dlam_c + hot.gamma * c.lam_h * c.dlam_h
        deco = cold.gamma * c.lam_c**2 / cold.beta + hot.gamma * c.lam_h**2 / hot.beta
        if a > 0:
            m = self._rescale_matrix(math.exp(-a * dt))
            values = (values.reshape(-1, self.grid.n_y) @ m).reshape(values.shape)
            f = [-math.expm1(-n * a * dt) / (n * a) for n in (1, 2, 3)]
        else:
            f = [dt, dt, dt]
        r, y = self._r, self._y
        # trajectory-independent part on the full grid, noise force as a phase along y only
        expo = 1j * f[0] * (w2 * r + self.kappa * r**3) * y - deco * f[1] * self._y2
        if self.kappa:
            expo = expo + 1j * f[2] * (0.25 * self.kappa) * r * self._y3
        force = np.asarray(c.lam_c * xi_c + c.lam_h * xi_h, dtype=float)[..., None, None]
        return values * (np.exp(expo) * np.exp(-1j * f[0] * force * y))

    def step(self, values: np.ndarray, controls: tuple[Controls, Controls, Controls], xi_c, xi_h) -> np.ndarray:
        v = self.kinetic_half(values)
        v = self.diagonal(v, controls[1], xi_c, xi_h)
        v = self.kinetic_half(v)
        return hermitian_part(self.grid, v)

    # Fused stepping. Consecutive half kinetic steps merge into one full step when the
    # state is carried half a kinetic step ahead, phi_n = K(dt/2) psi_n, so that
    # phi_{n+1} = K(dt) D_n phi_n. The kinetic part is free motion, whose moment map
    # is exact, so moments of psi_n follow from those of phi_n without an extra FFT.

    def lead(self, values: np.ndarray) -> np.ndarray:
        """psi -> phi, half a kinetic step ahead."""
        return self.kinetic_half(values)

    def lag(self, values: np.ndarray) -> np.ndarray:
        """phi -> psi."""
        return scipy.fft.ifft2(scipy.fft.fft2(values) * self._kin_back)

    def step_lead(self, values: np.ndarray, controls: tuple[Controls, Controls, Controls], xi_c, xi_h) -> np.ndarray:
        v = self.diagonal(values, controls[1], xi_c, xi_h)
        v = scipy.fft.ifft2(scipy.fft.fft2(v) * self._kin_full)
        return hermitian_part(self.grid, v)

    def moments_lead(self, values: np.ndarray, check: bool = False):
        q, p, q2, p2, qp = observables_grid(self.grid, values, check=check)
        h = -0.5 * self.dt
        return q + h * p, p, q2 + 2.0 * h * qp + h * h * p2, p2, qp + h * p2

    def bad_trajectories(self, values: np.ndarray, limit: float = 1e-4) -> np.ndarray:
        """Per-trajectory flag: non-finite values or boundary mass above ``limit``."""
        finite = np.isfinite(values).all(axis=(-2, -1))
        with np.errstate(invalid="ignore"):
            leak = boundary_mass(self.grid, values) >= limit
        return ~finite | leak


def step_grid(state: DensityGrid, controls, xi_c, xi_h, dt: float,
              reservoirs: tuple[ReservoirSpec, ReservoirSpec], kappa: float = 0.0,
              propagator: GridPropagator | None = None) -> DensityGrid:
    """Advance one time step; raises on NaN or when density reaches the grid frame."""
    prop = propagator or GridPropagator(state.grid, dt, reservoirs, kappa)
    v = prop.step(state.values, controls, xi_c, xi_h)
    if not np.isfinite(v).all():
        raise FloatingPointError("non-finite density")
    if np.any(boundary_mass(state.grid, v) >= 1e-4):
        raise GridOverflowError("density reached the outer frame; enlarge the grid")
    return DensityGrid(state.grid, v, state.t + dt)


def _hermite_functions(x: np.ndarray, n_max: int, omega: float) -> np.ndarray:
    # normalized oscillator eigenfunctions phi_0..phi_n_max at frequency omega
    xi = math.sqrt(omega) * x
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = (omega / math.pi) ** 0.25 * np.exp(-0.5 * xi * xi)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(2, n_max + 1):
        out[n] = math.sqrt(2.0 / n) * xi * out[n - 1] - math.sqrt((n - 1) / n) * out[n - 2]
    return out


def fock_matrix(grid: GridSpec, values: np.ndarray, n_max: int = 16, omega_ref: float = 1.0) -> np.ndarray:
    """rho_nm = int phi_n(r - y/2) rho(r, y) phi_m(r + y/2) dr dy for n, m <= n_max."""
    turning = math.sqrt((2 * n_max + 1) / omega_ref)
    if turning > min(grid.L_r, 0.5 * grid.L_y):
        raise ValueError(
            f"Fock basis up to n={n_max} at omega={omega_ref} is wider than the grid "
            f"(turning point {turning:.3g})"
        )
    r = grid.r[:, None]
    y = grid.y[None, :]
    left = _hermite_functions(r - 0.5 * y, n_max, omega_ref)
    right = _hermite_functions(r + 0.5 * y, n_max, omega_ref)
    return grid.dr * grid.dy * np.einsum("nij,...ij,mij->...nm", left, values, right)


def project_fock(grid: GridSpec, values: np.ndarray, n: int, m: int, omega_ref: float = 1.0):
    return fock_matrix(grid, values, max(n, m), omega_ref)[..., n, m]


def position_matrix(grid: GridSpec, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assemble rho(x, x') on a grid of spacing dy from a single rho(r, y).

    Returns the sample points and the matrix ``rho[a, b] = <x_a| rho |x_b>``.
    """
    if values.ndim != 2:
        raise ValueError("expected a single density")
    h = grid.dy
    na = int(2 * grid.L_r / h)
    x = -grid.L_r + h * np.arange(na)
    a, b = np.meshgrid(np.arange(na), np.arange(na), indexing="ij")
    jy = b - a
    half = grid.n_y // 2
    ok = np.abs(jy) < half
    # band-limited interpolation along r onto the half-spacing points
    rq = -grid.L_r + 0.5 * h * np.arange(2 * na)
    kern = _periodic_kernel(rq[:, None] - grid.r[None, :], grid.n_r, grid.L_r)
    on_r = kern @ values
    mat = np.zeros((na, na), dtype=complex)
    ri = (a + b)[ok]
    mat[ok] = on_r[ri, jy[ok] % grid.n_y]
    return x, mat


def entropy_grid(grid: GridSpec, values: np.ndarray, floor: float = 1e-10) -> float:
    """Von Neumann entropy of a (typically ensemble-averaged) density."""
    _, mat = position_matrix(grid, values)
    mat = 0.5 * (mat + mat.conj().T)
    lam = np.linalg.eigvalsh(mat) * grid.dy
    lam = lam[lam > floor]
    return float(-(lam * np.log(lam)).sum())


def dump_snapshot(grid: GridSpec, values: np.ndarray, path, t: float, header: str = "") -> None:
    """Write the ensemble-averaged position density and the ensemble moments as CSV."""
    v = values.reshape(-1, grid.n_r, grid.n_y).mean(axis=0)
    mom = observables_grid(grid, v, check=False)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("# t={!r} q={:.12e} p={:.12e} q2={:.12e} p2={:.12e} qp={:.12e}\n".format(t, *map(float, mom)))
        w = csv.writer(fh)
        w.writerow(["r", "density"])
        for ri, d in zip(grid.r, v[:, 0].real):
            w.writerow([f"{ri:.10g}", f"{d:.12e}"])
