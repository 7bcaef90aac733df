"""Periodic 1D Kohn-Sham model with smeared cores and a screened interaction.

Everything lives on a uniform collocation grid over a torus of given length.
Densities and potentials are node-value arrays; integrals are h-weighted sums.
The electron-electron and electron-core coupling both go through a single
screened kernel applied in Fourier space, so the total energy is

    E = 1/2 sum_i f_i int |psi_i'|^2  +  1/2 int int (rho+m) K (rho+m)

with m the summed negative Gaussian core charge. Forces on the cores come
from the analytic Hellmann-Feynman expression at a given density, which is
exact only when that density solves the self-consistency condition.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import circulant, eigh, LinAlgError

from .errors import EigensolveFailure, UnresolvedGaussian

# Boltzmann constant in Hartree atomic units (Ha/K)
KB_HARTREE = 3.166811563e-6

# periodic images summed per core; tails beyond this are < 1e-30 for any
# width the resolvability check lets through
_N_IMAGES = 2


class Grid1D:
    """Uniform periodic grid: n_points nodes over [0, length).

    Caches the wavenumbers and the dense circulant kinetic matrix, which is
    the spectral -1/2 d^2/dx^2 restricted to the grid.
    """

    def __init__(self, n_points, length):
        if n_points < 8 or n_points % 2 != 0:
            raise ValueError(f"need an even n_points >= 8, got {n_points}")
        if length <= 0:
            raise ValueError("length must be positive")
        self.n_points = int(n_points)
        self.length = float(length)
        self.spacing = self.length / self.n_points
        self.x = self.spacing * np.arange(self.n_points)
        self.wavenumbers = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)
        # first column of F^-1 diag(q^2/2) F; real and symmetric
        col = np.fft.ifft(0.5 * self.wavenumbers**2).real
        self.kinetic_matrix = circulant(col)

    def integrate(self, values):
        return self.spacing * float(np.sum(values))

    def norm(self, values):
        """Grid-weighted L2 norm."""
        return float(np.sqrt(self.spacing * np.sum(np.asarray(values) ** 2)))

    def __repr__(self):
        return f"Grid1D(n_points={self.n_points}, length={self.length:g})"


class YukawaOperator:
    """Screened Coulomb kernel, diagonal in Fourier space.

    multiplier(q) = 4 pi / (eps0 * (q^2 + kappa^2)); kappa > 0 keeps the
    q = 0 component finite so charged fluctuations cost finite energy.
    """

    def __init__(self, grid, kappa, eps0):
        if kappa <= 0 or eps0 <= 0:
            raise ValueError("kappa and eps0 must be positive")
        self.grid = grid
        self.kappa = float(kappa)
        self.eps0 = float(eps0)
        q = grid.wavenumbers
        self.multiplier = 4.0 * np.pi / (eps0 * (q**2 + kappa**2))

    def apply(self, values):
        return np.fft.ifft(self.multiplier * np.fft.fft(values)).real

    def matrix(self):
        """Dense kernel matrix, for response work on small grids."""
        col = np.fft.ifft(self.multiplier).real
        return circulant(col)


@dataclass
class AtomChain:
    """State of the nuclei: positions on the torus plus velocities.

    All atoms share one mass, core charge, and smearing width. Positions are
    stored wrapped into [0, length); propagation code keeps its own unwrapped
    copies and only builds chains for field evaluation.
    """

    positions: np.ndarray
    velocities: np.ndarray
    mass: float
    charge: float = 1.0
    width: float = 2.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have equal shape")
        if self.mass <= 0 or self.charge <= 0 or self.width <= 0:
            raise ValueError("mass, charge, width must be positive")

    @property
    def n_atoms(self):
        return len(self.positions)

    @classmethod
    def equispaced(cls, n_atoms, spacing, mass, charge=1.0, width=2.0):
        """Equally spaced chain at rest; the lattice equilibrium geometry."""
        pos = spacing * (np.arange(n_atoms) + 0.5)
        return cls(pos, np.zeros(n_atoms), mass, charge, width)


def pseudocharge(grid, atoms):
    """Smeared core charge field and its per-atom position derivatives.

    Each core contributes a periodized negative Gaussian of integral
    -charge. Returns (m, dm) with m of shape (n_points,) and dm of shape
    (n_atoms, n_points), dm[i] = d m / d R_i.

    Raises UnresolvedGaussian when the width is under three grid spacings;
    below that the image sum no longer integrates to -charge at grid
    precision and the analytic gradient drifts from the discrete one.
    """
    h = grid.spacing
    sigma = atoms.width
    if sigma < 3.0 * h * (1.0 - 1e-9):
        raise UnresolvedGaussian(sigma, h)
    length = grid.length
    amp = -atoms.charge / np.sqrt(2.0 * np.pi * sigma**2)
    m = np.zeros(grid.n_points)
    dm = np.zeros((atoms.n_atoms, grid.n_points))
    for i, pos in enumerate(atoms.positions):
        u = grid.x - pos
        u -= length * np.round(u / length)
        for j in range(-_N_IMAGES, _N_IMAGES + 1):
            uj = u + j * length
            g = amp * np.exp(-(uj**2) / (2.0 * sigma**2))
            m += g
            dm[i] += g * uj / sigma**2
    return m, dm


@dataclass
class KsSolution:
    """One application of the Kohn-Sham map at a fixed input density.

    orbitals has shape (n_points, n_kept) with columns h-orthonormal;
    eigenvalues ascend. occupations sum to n_electrons exactly; entries are
    0/1 except possibly inside a narrow frontier window when occ_width > 0.
    out_density is the occupied-orbital density the map returns.
    """

    eigenvalues: np.ndarray
    orbitals: np.ndarray
    occupations: np.ndarray
    out_density: np.ndarray
    fermi_level: float
    n_electrons: int

    @property
    def gap(self):
        """Energy separation across the occupation frontier."""
        n = self.n_electrons
        if len(self.eigenvalues) <= n:
            return 0.0
        return float(self.eigenvalues[n] - self.eigenvalues[n - 1])


def occupations_ramp(eigenvalues, n_electrons, width):
    """Fill levels with a linear ramp of half-width `width` at the frontier.

    width = 0 reproduces plain integer filling of the lowest levels. For
    width > 0, f_i = clip((mu + width - eps_i) / (2 width), 0, 1) with mu
    chosen so the occupations sum to n_electrons. Levels separated from the
    frontier by more than `width` stay exactly 0 or 1, so a gapped spectrum
    is untouched; the ramp only shares charge among near-degenerate frontier
    levels that would otherwise make the map discontinuous.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    k = len(eigenvalues)
    if n_electrons > k:
        raise ValueError("not enough levels to occupy")
    if width == 0.0:
        f = np.zeros(k)
        f[:n_electrons] = 1.0
        mu = float(eigenvalues[n_electrons - 1])
        return f, mu

    def total(mu):
        return np.sum(np.clip((mu + width - eigenvalues) / (2.0 * width), 0.0, 1.0))

    lo = float(eigenvalues[0]) - 2.0 * width
    hi = float(eigenvalues[-1]) + 2.0 * width
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if total(mu) < n_electrons:
            lo = mu
        else:
            hi = mu
    mu = 0.5 * (lo + hi)
    f = np.clip((mu + width - eigenvalues) / (2.0 * width), 0.0, 1.0)
    # spread the bisection remainder over the active window; all active
    # levels respond with the same slope so this is the exact correction
    active = (f > 0.0) & (f < 1.0)
    deficit = n_electrons - float(np.sum(f))
    if np.any(active):
        f[active] += deficit / int(np.sum(active))
    elif abs(deficit) > 1e-9:
        raise ValueError("occupation window empty but sum off; widen the ramp")
    return f, mu


def ks_map(grid, yukawa, m_field, rho_in, n_electrons, occ_width=0.0, n_extra=4):
    """Lowest-levels Kohn-Sham map: input density to occupied-orbital density.

    Builds H = -1/2 d^2/dx^2 + K(rho_in + m), takes the n_electrons + n_extra
    lowest eigenpairs of the dense symmetric matrix, occupies them, and
    returns the resulting KsSolution. n_electrons must stay below a quarter
    of the grid size so the top occupied level is still well resolved.
    """
    n = grid.n_points
    if n_electrons > n // 4:
        raise ValueError(
            f"n_electrons={n_electrons} too large for grid of {n} points"
        )
    n_keep = min(n, n_electrons + n_extra)
    v_eff = yukawa.apply(rho_in + m_field)
    ham = grid.kinetic_matrix + np.diag(v_eff)
    try:
        vals, vecs = eigh(
            ham, subset_by_index=(0, n_keep - 1), driver="evr",
            check_finite=False,
        )
    except (LinAlgError, ValueError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(vals)):
        raise EigensolveFailure("non-finite eigenvalues")
    orbitals = vecs / np.sqrt(grid.spacing)
    occ, mu = occupations_ramp(vals, n_electrons, occ_width)
    out_density = (orbitals**2) @ occ
    return KsSolution(
        eigenvalues=vals,
        orbitals=orbitals,
        occupations=occ,
        out_density=out_density,
        fermi_level=mu,
        n_electrons=n_electrons,
    )


def kinetic_energy(grid, solution):
    """1/2 sum_i f_i int |psi_i'|^2, evaluated spectrally."""
    psi_hat = np.fft.fft(solution.orbitals, axis=0)
    per_orbital = (
        0.5
        * grid.spacing
        / grid.n_points
        * (grid.wavenumbers**2) @ np.abs(psi_hat) ** 2
    )
    return float(per_orbital @ solution.occupations)


def electrostatic_energy(grid, yukawa, rho, m_field):
    """1/2 int int (rho+m) K (rho+m)."""
    tot = rho + m_field
    return 0.5 * grid.integrate(tot * yukawa.apply(tot))


def total_energy(grid, yukawa, solution, m_field):
    """Model energy of a solved orbital set against a given core field.

    Uses the solution's own output density in the interaction term, so on a
    self-consistent density this is the ground-state energy at the current
    geometry.
    """
    return kinetic_energy(grid, solution) + electrostatic_energy(
        grid, yukawa, solution.out_density, m_field
    )


def hf_force(grid, yukawa, dm, rho, m_field):
    """Hellmann-Feynman forces: f_i = -int (d m / d R_i) K (rho + m).

    Exact at a self-consistent density; at an approximate density the error
    is first order in the density error, which is the whole point of the
    propagation schemes built on top.
    """
    v = yukawa.apply(rho + m_field)
    return -grid.spacing * (dm @ v)


@dataclass(frozen=True)
class ChainSystem:
    """Fixed model data for one chain: grid, kernel, and atomic constants.

    The mutable degrees of freedom (positions, velocities, densities) are
    threaded through functions explicitly; this bundle is everything that
    stays put during a run.
    """

    grid: Grid1D
    yukawa: YukawaOperator
    n_atoms: int
    spacing: float
    mass: float
    charge: float = 1.0
    width: float = 2.0
    occ_width: float = 0.0

    @property
    def n_electrons(self):
        return int(round(self.n_atoms * self.charge))

    def equilibrium_positions(self):
        return self.spacing * (np.arange(self.n_atoms) + 0.5)

    def chain_at(self, positions, velocities=None):
        if velocities is None:
            velocities = np.zeros_like(positions)
        return AtomChain(
            np.mod(positions, self.grid.length),
            velocities,
            self.mass,
            self.charge,
            self.width,
        )

    def fields_at(self, positions):
        """Pseudocharge and gradients for raw (possibly unwrapped) positions."""
        return pseudocharge(self.grid, self.chain_at(positions))

    def ks(self, m_field, rho_in, n_extra=4):
        return ks_map(
            self.grid,
            self.yukawa,
            m_field,
            rho_in,
            self.n_electrons,
            occ_width=self.occ_width,
            n_extra=n_extra,
        )


def build_system(
    n_atoms,
    spacing,
    points_per_atom,
    mass,
    kappa,
    eps0,
    charge=1.0,
    width=2.0,
    occ_width=0.0,
):
    """Convenience constructor: chain of n_atoms on a matched periodic grid."""
    length = n_atoms * spacing
    grid = Grid1D(n_atoms * points_per_atom, length)
    yukawa = YukawaOperator(grid, kappa, eps0)
    return ChainSystem(
        grid=grid,
        yukawa=yukawa,
        n_atoms=n_atoms,
        spacing=spacing,
        mass=mass,
        charge=charge,
        width=width,
        occ_width=occ_width,
    )


def thermal_velocity(temperature, mass):
    """Speed scale sqrt(2 kB T / M) used to seed single-mode launches."""
    return float(np.sqrt(2.0 * KB_HARTREE * temperature / mass))
