"""Car-Parrinello propagation: orbitals carry fictitious inertia.

Instead of re-solving the eigenproblem each step, the occupied orbitals get
mass mu and Newtonian dynamics

    mu psi_i'' = -f_i H[rho] psi_i + sum_j Lambda_ij psi_j
    mass R_I'' = f_I(R, rho)

with rho = sum f_i |psi_i|^2 and the multipliers Lambda enforcing
h-orthonormality. Velocity Verlet with a SHAKE pass on positions and a
RATTLE pass on velocities keeps the constraints exact; no eigensolve
happens after initialization, which is the scheme's entire cost advantage.

Occupations are frozen at their initial self-consistent values. The
conserved quantity is the extended energy: physical energy plus the
fictitious orbital kinetic term (1/2) mu sum_i |psi_i'|^2.
"""

import warnings

import numpy as np

from .dft import KsSolution, hf_force, kinetic_energy, electrostatic_energy
from .errors import ConstraintDivergence, LargeStepWarning, NonFinite
from .md import Trajectory, _bootstrap_policy
from .scf import rho_scf, ScfPolicy, ToTolerance

_SHAKE_TOL = 1e-12
_SHAKE_MAX = 50


def _shake(x_old, c, h):
    """Symmetric multipliers making c + x_old @ lam h-orthonormal.

    Damped Newton on the Gram residual; converges in a few sweeps when the
    unconstrained update is already near the constraint manifold.
    """
    a = h * (c.T @ c)
    d = h * (x_old.T @ c)
    eye = np.eye(a.shape[0])
    lam = np.zeros_like(a)
    for _ in range(_SHAKE_MAX):
        g = a + lam @ d + d.T @ lam + lam @ lam - eye
        err = float(np.max(np.abs(g)))
        if err < _SHAKE_TOL:
            return lam
        lam = lam - 0.5 * g
    raise ConstraintDivergence(_SHAKE_MAX, err)


def _rattle(x_new, w, h):
    """Velocity-stage multipliers; exact in one shot for orthonormal x_new."""
    return -0.5 * h * (w.T @ x_new + x_new.T @ w)


def run_cpmd(system, cfg, positions, velocities):
    """Propagate nuclei and orbitals together; returns a Trajectory.

    Starts from the converged ground state at the initial geometry with
    orbital velocities zero, so the fictitious modes begin cold and the
    extended energy measures how much they heat up.
    """
    grid = system.grid
    h = grid.spacing
    mass = system.mass
    mu = cfg.mu
    dt = cfg.dt

    r = np.asarray(positions, dtype=float).copy()
    v = np.asarray(velocities, dtype=float).copy()

    m_field, dm = system.fields_at(r)
    boot = rho_scf(
        system,
        m_field,
        np.full(grid.n_points, system.n_electrons / grid.length),
        _bootstrap_policy(cfg) if cfg.scf_policy is not None else ScfPolicy(
            mode=ToTolerance(cfg.bootstrap_tol, cfg.bootstrap_max_iter)
        ),
    )
    sol = boot.solution
    keep = sol.occupations > 1e-12
    occ = sol.occupations[keep]
    x = sol.orbitals[:, keep].copy()
    xd = np.zeros_like(x)
    n_orb = x.shape[1]

    v_eff = system.yukawa.apply(sol.out_density + m_field)
    lam_max = 0.5 * float(np.max(grid.wavenumbers**2)) + float(np.max(v_eff))
    if dt * np.sqrt(lam_max / mu) >= 2.0:
        warnings.warn(
            f"dt*sqrt(lam_max/mu) = {dt * np.sqrt(lam_max / mu):.2f} >= 2: "
            "fastest orbital mode unstable under Verlet",
            LargeStepWarning,
            stacklevel=2,
        )

    def orbital_force(xmat, veff):
        # -f_i H psi_i with H = kinetic + diag(veff)
        hx = grid.kinetic_matrix @ xmat + veff[:, None] * xmat
        return -hx * occ[None, :]

    rho = (x**2) @ occ
    v_eff = system.yukawa.apply(rho + m_field)
    f_orb = orbital_force(x, v_eff)
    f_nuc = hf_force(grid, system.yukawa, dm, rho, m_field)

    n_steps = cfg.n_steps
    times = dt * np.arange(n_steps)
    pos = np.empty((n_steps, system.n_atoms))
    vel = np.empty_like(pos)
    frc = np.empty_like(pos)
    ene = np.empty(n_steps)
    ext = np.empty(n_steps)
    fict = np.empty(n_steps)
    ortho = np.empty(n_steps)
    dmass = np.empty(n_steps)
    eye = np.eye(n_orb)
    lam_last = np.zeros((n_orb, n_orb))

    for k in range(n_steps):
        sol_k = KsSolution(
            eigenvalues=np.zeros(n_orb),
            orbitals=x,
            occupations=occ,
            out_density=rho,
            fermi_level=0.0,
            n_electrons=system.n_electrons,
        )
        e_kin_orb = kinetic_energy(grid, sol_k)
        e_pot = e_kin_orb + electrostatic_energy(grid, system.yukawa, rho, m_field)
        e_nuc_kin = 0.5 * mass * float(np.sum(v**2))
        e_fict = 0.5 * mu * h * float(np.sum(xd**2))
        if not np.isfinite(e_pot):
            raise NonFinite(k, "cpmd energy")

        pos[k] = r
        vel[k] = v
        frc[k] = f_nuc
        ene[k] = e_pot + e_nuc_kin
        ext[k] = e_pot + e_nuc_kin + e_fict
        fict[k] = e_fict
        ortho[k] = float(np.max(np.abs(h * (x.T @ x) - eye)))
        dmass[k] = grid.integrate(rho)

        # position half-kick and SHAKE
        v_half = v + 0.5 * dt / mass * f_nuc
        r_new = r + dt * v_half
        c = x + dt * xd + 0.5 * dt**2 / mu * f_orb
        lam = _shake(x, c, h)
        x_new = c + x @ lam
        xd_half = (x_new - x) / dt
        lam_last = (2.0 * mu / dt**2) * lam

        # new fields, velocity half-kick and RATTLE
        m_field, dm = system.fields_at(r_new)
        rho_new = (x_new**2) @ occ
        v_eff = system.yukawa.apply(rho_new + m_field)
        f_orb_new = orbital_force(x_new, v_eff)
        f_nuc_new = hf_force(grid, system.yukawa, dm, rho_new, m_field)
        w = xd_half + 0.5 * dt / mu * f_orb_new
        xd_new = w + x_new @ _rattle(x_new, w, h)
        v_new = v_half + 0.5 * dt / mass * f_nuc_new

        if not (np.all(np.isfinite(r_new)) and np.all(np.isfinite(x_new))):
            raise NonFinite(k, "cpmd state")
        r, v, x, xd = r_new, v_new, x_new, xd_new
        rho, f_orb, f_nuc = rho_new, f_orb_new, f_nuc_new

    return Trajectory(
        scheme="cpmd",
        times=times,
        positions=pos,
        velocities=vel,
        energies=ene,
        forces=frc,
        scf_iterations=np.zeros(n_steps, dtype=int),
        scf_residuals=ortho,
        density_mass=dmass,
        density_dev_times=np.array([]),
        density_dev=np.array([]),
        metadata={
            "scheme": "cpmd",
            "dt": dt,
            "mu": mu,
            "extended_energy": ext,
            "fictitious_kinetic": fict,
            "multipliers": lam_last,
            "occupations": occ,
        },
        final_state={"r": r, "v": v},
    )
