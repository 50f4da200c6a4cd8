"""Pseudo-spectral solver for forced 2D Navier-Stokes in vorticity form.

State is the Fourier vorticity on the doubly periodic square. Coefficients
follow the convention omega(x) = sum_k omega_hat(k) exp(i k.x), i.e.
``omega_hat = fft2(omega) / (nx*ny)``, so Parseval sums read off directly:
``mean(omega**2) == sum(|omega_hat|**2)``.

The nonlinear term is evaluated pseudo-spectrally with 2/3 dealiasing. Time
stepping is classical RK4 with step-doubling error control. Forcing is
band-limited with random phases redrawn once per output interval and a
time-dependent amplitude balancing the instantaneous enstrophy dissipation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, StiffnessError
from .fields import Grid2D, ScalarField2D, VectorField2D, VelocitySeries

__all__ = [
    "SpectralState",
    "SolverConfig",
    "ForcingRealization",
    "velocity_from_vorticity",
    "rhs",
    "forcing_amplitude",
    "step_rk4",
    "simulate",
    "enstrophy_spectrum",
    "SimulationResult",
]

DT_FLOOR = 1e-10


@lru_cache(maxsize=8)
def _spectral_setup(grid: Grid2D):
    """Wavenumber grids, |k|^2, inverse |k|^2, and the 2/3 dealias mask."""
    kx, ky = grid.wavenumbers()
    k2 = kx**2 + ky**2
    with np.errstate(divide="ignore"):
        inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    kxi = np.fft.fftfreq(grid.nx) * grid.nx
    kyi = np.fft.fftfreq(grid.ny) * grid.ny
    mask = (np.abs(kxi)[:, None] <= grid.nx / 3.0) & (np.abs(kyi)[None, :] <= grid.ny / 3.0)
    for a in (kx, ky, k2, inv_k2, mask):
        a.flags.writeable = False
    return kx, ky, k2, inv_k2, mask


def dealias_mask(grid: Grid2D):
    return _spectral_setup(grid)[4]


def _to_phys(coeffs):
    return np.fft.ifft2(coeffs).real * coeffs.size


def _to_spec(values):
    return np.fft.fft2(values) / values.size


@dataclass(frozen=True)
class SpectralState:
    """Fourier vorticity coefficients plus the simulation clock."""

    grid: Grid2D
    omega_hat: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        oh = np.ascontiguousarray(self.omega_hat, dtype=np.complex128)
        if oh.shape != (self.grid.nx, self.grid.ny):
            raise ValueError("omega_hat shape does not match grid")
        oh = oh * dealias_mask(self.grid)
        oh.flags.writeable = False
        object.__setattr__(self, "omega_hat", oh)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_vorticity(cls, f: ScalarField2D) -> "SpectralState":
        return cls(f.grid, _to_spec(f.values), f.time)

    def vorticity(self) -> ScalarField2D:
        return ScalarField2D(self.grid, _to_phys(self.omega_hat), self.time)

    def enstrophy(self) -> float:
        """Domain-mean enstrophy 0.5 <omega, omega>."""
        return 0.5 * float(np.sum(np.abs(self.omega_hat) ** 2))

    def energy(self) -> float:
        """Domain-mean kinetic energy 0.5 <u, u>."""
        _, _, _, inv_k2, _ = _spectral_setup(self.grid)
        return 0.5 * float(np.sum(np.abs(self.omega_hat) ** 2 * inv_k2))


@dataclass(frozen=True)
class SolverConfig:
    nx: int = 512
    nu: float = 1e-5
    t_end: float = 50.0
    dt_out: float = 0.2
    k_lo: float = 3.5
    k_hi: float = 4.5
    seed: int = 0
    tol: float = 1e-6
    spinup: float = 5.0
    init_rms: float = 0.6
    init_peak_k: float = 6.0
    dt_init: float = 1e-2
    domain: float = 2.0 * np.pi

    def __post_init__(self):
        if self.nu < 0:
            raise ConfigError("viscosity must be non-negative")
        if not (0 < self.k_lo < self.k_hi < self.nx / 3.0):
            raise ConfigError("forcing band must satisfy 0 < k_lo < k_hi < nx/3")
        if self.dt_out <= 0:
            raise ConfigError("output step must be positive")
        if self.t_end < 0 or self.spinup < 0:
            raise ConfigError("t_end and spinup must be non-negative")
        if self.tol <= 0:
            raise ConfigError("tolerance must be positive")
        n_out = self.t_end / self.dt_out
        if abs(n_out - round(n_out)) > 1e-9:
            raise ConfigError("t_end must be an integer multiple of dt_out")

    def grid(self) -> Grid2D:
        return Grid2D(self.nx, self.nx, 0.0, self.domain, 0.0, self.domain)


@dataclass(frozen=True)
class ForcingRealization:
    """Unit-magnitude random phases on the forcing band, conjugate symmetric."""

    fhat: np.ndarray
    amplitude: float = 0.0

    def with_amplitude(self, amp: float) -> "ForcingRealization":
        return replace(self, amplitude=float(amp))


def _conjugate_mirror(a):
    """Index map k -> -k (mod n) on both axes."""
    return np.roll(np.roll(a[::-1, ::-1], 1, axis=0), 1, axis=1)


def band_mask(grid: Grid2D, k_lo: float, k_hi: float):
    _, _, k2, _, _ = _spectral_setup(grid)
    kk = np.sqrt(k2)
    return (kk > k_lo) & (kk < k_hi)


def draw_forcing(grid: Grid2D, k_lo: float, k_hi: float, rng) -> ForcingRealization:
    """Fresh phases, uniform in [0, 2pi), one per conjugate mode pair."""
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(grid.nx, grid.ny))
    raw = np.exp(1j * phases)
    mirrored = np.conj(_conjugate_mirror(raw))
    # keep the draw from the lexicographically first member of each pair
    idx = np.arange(grid.nx)[:, None] * grid.ny + np.arange(grid.ny)[None, :]
    first = idx <= _conjugate_mirror(idx)
    fhat = np.where(first, raw, mirrored) * band_mask(grid, k_lo, k_hi)
    fhat.flags.writeable = False
    return ForcingRealization(fhat)


def velocity_from_vorticity(state: SpectralState) -> VectorField2D:
    """Divergence-free velocity with curl(u) = omega, spectrally exact."""
    kx, ky, _, inv_k2, _ = _spectral_setup(state.grid)
    psi_t = -state.omega_hat * inv_k2  # Laplacian^{-1} omega
    u = _to_phys(-1j * ky * psi_t)
    v = _to_phys(1j * kx * psi_t)
    return VectorField2D(state.grid, u, v, state.time)


def rhs(state: SpectralState, forcing: ForcingRealization | None, nu: float):
    """Spectral tendency of the vorticity: advection + diffusion + forcing."""
    grid = state.grid
    kx, ky, k2, inv_k2, mask = _spectral_setup(grid)
    oh = state.omega_hat
    psi_t = -oh * inv_k2
    u = _to_phys(-1j * ky * psi_t)
    v = _to_phys(1j * kx * psi_t)
    wx = _to_phys(1j * kx * oh)
    wy = _to_phys(1j * ky * oh)
    adv = _to_spec(u * wx + v * wy) * mask
    out = -adv - nu * k2 * oh
    if forcing is not None and forcing.amplitude != 0.0:
        out = out + forcing.amplitude * forcing.fhat
    return out


def forcing_amplitude(state: SpectralState, forcing: ForcingRealization, nu: float) -> float:
    """Amplitude balancing enstrophy dissipation against realized injection.

    The dissipation target is nu * sum_k |k|^2 * 0.5 |omega_hat|^2 (shell-sum
    form). The realized injection rate of amplitude-A forcing is
    A * sum_band Re(conj(omega_hat) fhat); near-orthogonal draws are guarded
    by flooring the denominator at 5% of its Cauchy-Schwarz bound.
    """
    _, _, k2, _, _ = _spectral_setup(state.grid)
    target = nu * 0.5 * float(np.sum(k2 * np.abs(state.omega_hat) ** 2))
    if target == 0.0:
        return 0.0
    on_band = forcing.fhat != 0
    denom = float(np.sum((np.conj(state.omega_hat) * forcing.fhat).real))
    bound = float(
        np.sqrt(np.sum(np.abs(state.omega_hat[on_band]) ** 2) * np.sum(np.abs(forcing.fhat) ** 2))
    )
    if bound == 0.0:
        return 0.0
    floor = 0.05 * bound
    if abs(denom) < floor:
        denom = floor if denom >= 0 else -floor
    return target / denom


def _rk4(state: SpectralState, dt: float, forcing, nu: float) -> SpectralState:
    k1 = rhs(state, forcing, nu)
    s = replace
    k2 = rhs(s(state, omega_hat=state.omega_hat + 0.5 * dt * k1, time=state.time + 0.5 * dt), forcing, nu)
    k3 = rhs(s(state, omega_hat=state.omega_hat + 0.5 * dt * k2, time=state.time + 0.5 * dt), forcing, nu)
    k4 = rhs(s(state, omega_hat=state.omega_hat + dt * k3, time=state.time + dt), forcing, nu)
    oh = state.omega_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return SpectralState(state.grid, oh, state.time + dt)


def step_rk4(
    state: SpectralState,
    dt: float,
    forcing: ForcingRealization | None = None,
    nu: float = 0.0,
    tol: float = 1e-6,
):
    """One accepted adaptive step; returns (new_state, dt_taken, dt_next).

    Error control by step-doubling: the full-dt solution is compared against
    two half steps; dt halves on rejection and doubles when the estimate is
    far below tolerance. The accepted state carries the standard local
    Richardson correction, so the propagated error sits well below the
    estimate used by the controller.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    while True:
        if dt < DT_FLOOR:
            raise StiffnessError(f"step size underflow below {DT_FLOOR}")
        big = _rk4(state, dt, forcing, nu)
        half = _rk4(state, 0.5 * dt, forcing, nu)
        small = _rk4(half, 0.5 * dt, forcing, nu)
        diff = small.omega_hat - big.omega_hat
        scale = np.sqrt(np.sum(np.abs(small.omega_hat) ** 2))
        err = np.sqrt(np.sum(np.abs(diff) ** 2)) / 15.0
        rel = err / scale if scale > 0 else 0.0
        if rel <= tol:
            dt_next = 2.0 * dt if rel < tol / 64.0 else dt
            accepted = SpectralState(
                state.grid, small.omega_hat + diff / 15.0, state.time + dt
            )
            return accepted, dt, dt_next
        dt *= 0.5


def enstrophy_spectrum(state: SpectralState):
    """Shell-summed enstrophy Z(k) over integer-width annuli |k| in [k-1/2, k+1/2)."""
    _, _, k2, _, _ = _spectral_setup(state.grid)
    dk = 2.0 * np.pi / state.grid.lx
    shells = np.rint(np.sqrt(k2) / dk).astype(int)
    z = 0.5 * np.abs(state.omega_hat) ** 2
    return np.bincount(shells.ravel(), weights=z.ravel())


def initial_state(config: SolverConfig) -> tuple[SpectralState, np.random.Generator]:
    """Random-phase vorticity with spectrum ~ k exp(-(k/k0)^2), rms-normalized."""
    grid = config.grid()
    rng = np.random.default_rng(config.seed)
    _, _, k2, _, mask = _spectral_setup(grid)
    kk = np.sqrt(k2) * grid.lx / (2.0 * np.pi)
    amp = kk * np.exp(-((kk / config.init_peak_k) ** 2))
    amp[0, 0] = 0.0
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(grid.nx, grid.ny))
    raw = amp * np.exp(1j * phases)
    oh = 0.5 * (raw + np.conj(_conjugate_mirror(raw))) * mask
    state = SpectralState(grid, oh, 0.0)
    rms = np.sqrt(2.0 * state.enstrophy())
    if rms > 0:
        state = SpectralState(grid, state.omega_hat * (config.init_rms / rms), 0.0)
    return state, rng


@dataclass
class SimulationResult:
    series: VelocitySeries
    log_rows: list
    initial: SpectralState
    final: SpectralState

    LOG_COLUMNS = ("time", "dt", "energy", "enstrophy", "amplitude", "omega_rms", "tau_eddy")

    def log_tsv(self) -> str:
        lines = ["\t".join(self.LOG_COLUMNS)]
        for row in self.log_rows:
            lines.append("\t".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def _advance_to(state, t_target, forcing, nu, tol, dt_cur, rng_draw=None):
    """Integrate until t_target, landing exactly; returns (state, dt_cur, A_last)."""
    amp = 0.0
    while state.time < t_target - 1e-12:
        remaining = t_target - state.time
        clipped = remaining < dt_cur
        dt_try = remaining if clipped else dt_cur
        f = None
        if forcing is not None:
            amp = forcing_amplitude(state, forcing, nu)
            f = forcing.with_amplitude(amp)
        state, dt_taken, dt_suggest = step_rk4(state, dt_try, f, nu, tol)
        if clipped and dt_taken == dt_try:
            dt_cur = max(dt_cur, dt_suggest)
        else:
            dt_cur = dt_suggest
    if abs(state.time - t_target) <= 1e-9:
        state = replace(state, time=t_target)
    return state, dt_cur, amp


def simulate(config: SolverConfig) -> SimulationResult:
    """Run spinup plus the forced window, sampling frames every dt_out.

    The initial condition is declared at t=0 after an unforced spin-down of
    ``config.spinup`` time units from the random-phase state. Deterministic
    for a fixed config (seed included).
    """
    state, rng = initial_state(config)
    dt_cur = config.dt_init
    if config.spinup > 0:
        state = replace(state, time=-config.spinup)
        state, dt_cur, _ = _advance_to(state, 0.0, None, config.nu, config.tol, dt_cur)
    initial = state

    n_out = int(round(config.t_end / config.dt_out))
    out_times = config.dt_out * np.arange(n_out + 1)

    frames = [velocity_from_vorticity(state)]
    rows = []

    def log_row(st, dt, amp):
        wrms = np.sqrt(2.0 * st.enstrophy())
        tau = 1.0 / wrms if wrms > 0 else np.inf
        rows.append((st.time, dt, st.energy(), st.enstrophy(), amp, wrms, tau))

    log_row(state, dt_cur, 0.0)
    for t_target in out_times[1:]:
        forcing = draw_forcing(state.grid, config.k_lo, config.k_hi, rng)
        state, dt_cur, amp = _advance_to(
            state, float(t_target), forcing, config.nu, config.tol, dt_cur
        )
        frames.append(velocity_from_vorticity(state))
        log_row(state, dt_cur, amp)

    series = VelocitySeries.from_frames(frames)
    return SimulationResult(series, rows, initial, state)
