"""Nuclear propagation: converged and truncated-SCF dynamics on one loop.

All position-Verlet schemes share a single step structure; they differ only
in how the electron density fed to the forces is produced.

  bomd_converged  SCF to tolerance each step, seeded by an extrapolation of
                  the recent converged densities
  bomd_n          exactly n mixing steps, seeded by the previous step's
                  output density
  trbomd_n        exactly n mixing steps, seeded by an auxiliary density
                  that itself obeys a second-order update

        R_{k+1}   = 2 R_k - R_{k-1} + (dt^2/mass) f(R_k, rhoscf_k)
        rho_{k+1} = 2 rho_k - rho_{k-1} + (dt w)^2 (rhoscf_k - rho_k)

The auxiliary line makes the truncated scheme time reversible: running the
two-step map backward from swapped history retraces the trajectory. Exactly
one SCF drive happens per step and its output feeds both lines.

Orbital (Car-Parrinello) propagation lives in the cpmd module; run()
dispatches to it so every scheme yields the same Trajectory shape.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dft import hf_force, thermal_velocity, total_energy
from .errors import LargeStepWarning, NonFinite, OddAtomCount
from .scf import FixedSteps, ScfPolicy, ToTolerance, rho_scf


@dataclass
class MdConfig:
    """Knobs of one propagation run.

    scheme selects the force pipeline; scf_policy must carry a ToTolerance
    mode for bomd_converged and a FixedSteps mode for the truncated schemes.
    omega is the auxiliary-density frequency (trbomd only). mu is the
    fictitious orbital mass (cpmd only).

    record_density_dev > 0 samples ``|rhoscf - rho_selfconsistent|_L1``
    every that many steps; it costs one converged SCF per sample.
    max_energy_drift, when set, stops the run once |E - E0|/|E0| exceeds it.
    allow_divergence turns a blow-up (non-finite state) into a truncated
    trajectory instead of an exception, for instability studies.
    """

    dt: float
    n_steps: int
    scheme: str
    scf_policy: ScfPolicy = None
    omega: float = None
    mu: float = None
    t_ion: float = 0.0
    record_density_dev: int = 0
    density_dev_tol: float = 1e-8
    bootstrap_tol: float = 1e-10
    bootstrap_max_iter: int = 3000
    max_energy_drift: float = None
    allow_divergence: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.scheme not in ("bomd_converged", "bomd_n", "trbomd_n", "cpmd"):
            raise ValueError(f"unknown scheme '{self.scheme}'")
        if self.scheme == "cpmd":
            if self.mu is None or self.mu <= 0:
                raise ValueError("cpmd needs mu > 0")
            return
        if self.scf_policy is None:
            raise ValueError(f"{self.scheme} needs an scf_policy")
        if self.scheme == "bomd_converged":
            if not isinstance(self.scf_policy.mode, ToTolerance):
                raise ValueError("bomd_converged needs a to-tolerance policy")
        elif self.scheme == "bomd_n":
            if not isinstance(self.scf_policy.mode, FixedSteps):
                raise ValueError("bomd_n needs a fixed-step policy")
        if self.scheme == "trbomd_n":
            # fixed-step is the normal mode; a to-tolerance policy is legal
            # and makes the density line decouple (matches bomd_converged)
            if self.omega is None or self.omega <= 0:
                raise ValueError("trbomd_n needs omega > 0")
            kappa = (self.omega * self.dt) ** 2
            if kappa >= 4.0:
                raise ValueError(
                    f"(omega*dt)^2 = {kappa:.3g} >= 4: auxiliary density "
                    "update unstable at this step"
                )
            if kappa > 0.25:
                warnings.warn(
                    f"(omega*dt)^2 = {kappa:.3g} > 0.25; auxiliary dynamics "
                    "marginally resolved",
                    LargeStepWarning,
                    stacklevel=2,
                )


@dataclass
class Trajectory:
    """Per-step record of a run plus enough tail state to continue it.

    positions are unwrapped (continuous across the periodic boundary);
    velocities are the centered differences the Verlet scheme defines.
    forces are the Hellmann-Feynman forces actually used, kept for the
    stiffness-fit analysis. density_dev holds sampled L1 distances between
    the propagated density and the self-consistent one at the same geometry.
    """

    scheme: str
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    energies: np.ndarray
    forces: np.ndarray
    scf_iterations: np.ndarray
    scf_residuals: np.ndarray
    density_mass: np.ndarray
    density_dev_times: np.ndarray
    density_dev: np.ndarray
    metadata: dict = field(default_factory=dict)
    final_state: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.times)

    def energy_drift(self):
        """|E(t) - E(0)| / |E(0)| series."""
        e0 = self.energies[0]
        return np.abs(self.energies - e0) / abs(e0)


def init_single_phonon(n_atoms, t_ion, mass, pattern="alternating"):
    """Velocity pattern (+v0, -v0, ...) with 1/2 m v0^2 = kB T.

    Alternating signs excite the zone-boundary mode and leave the center of
    mass exactly at rest; that needs an even atom count.
    """
    if pattern != "alternating":
        raise ValueError(f"unknown launch pattern '{pattern}'")
    if n_atoms % 2 != 0:
        raise OddAtomCount(n_atoms)
    v0 = thermal_velocity(t_ion, mass)
    signs = np.where(np.arange(n_atoms) % 2 == 0, 1.0, -1.0)
    return v0 * signs


def init_kick(n_atoms, v_kick):
    """First atom kicked right, the rest drift left; total momentum zero."""
    v = np.full(n_atoms, -v_kick / (n_atoms - 1))
    v[0] = v_kick
    return v


def _bootstrap_policy(cfg):
    p = cfg.scf_policy
    return ScfPolicy(
        scheme=p.scheme,
        alpha=p.alpha,
        kerker_q0=p.kerker_q0,
        mode=ToTolerance(cfg.bootstrap_tol, cfg.bootstrap_max_iter),
    )


def _extrapolate(history):
    """Seed guess from up to three previous converged densities."""
    if len(history) >= 3:
        return 3.0 * history[-1] - 3.0 * history[-2] + history[-3]
    if len(history) == 2:
        return 2.0 * history[-1] - history[-2]
    return history[-1]


def run(system, cfg, positions, velocities, history=None):
    """Propagate and record a full trajectory.

    positions/velocities set the initial condition; when `history` (the
    final_state dict of an earlier Trajectory) is given it supplies the
    two-step seed directly and no bootstrap SCF happens, which is what the
    reversibility checks use.
    """
    if cfg.scheme == "cpmd":
        from .cpmd import run_cpmd

        return run_cpmd(system, cfg, positions, velocities)

    grid = system.grid
    mass = system.mass
    nel = system.n_electrons
    dt = cfg.dt

    r_k = np.asarray(positions, dtype=float).copy()
    if history is None:
        v0 = np.asarray(velocities, dtype=float)
        m0, dm0 = system.fields_at(r_k)
        boot = rho_scf(
            system,
            m0,
            np.full(grid.n_points, nel / grid.length),
            _bootstrap_policy(cfg),
        )
        rho_star = boot.density
        f0 = hf_force(grid, system.yukawa, dm0, rho_star, m0)
        r_prev = r_k - dt * v0 + 0.5 * dt**2 / mass * f0
        rho_k = rho_star.copy()
        rho_prev = rho_star.copy()
        seed_state = rho_star.copy()
        conv_hist = [rho_star.copy()]
    else:
        r_prev = np.asarray(history["r_prev"], dtype=float).copy()
        rho_k = np.asarray(history["rho"], dtype=float).copy()
        rho_prev = np.asarray(history["rho_prev"], dtype=float).copy()
        seed_state = np.asarray(history["seed"], dtype=float).copy()
        conv_hist = [seed_state.copy()]

    n_steps = cfg.n_steps
    times = dt * np.arange(n_steps)
    pos = np.empty((n_steps, system.n_atoms))
    vel = np.empty_like(pos)
    frc = np.empty_like(pos)
    ene = np.empty(n_steps)
    its = np.zeros(n_steps, dtype=int)
    res = np.empty(n_steps)
    dmass = np.empty(n_steps)
    dev_t = []
    dev = []
    stopped = None
    diverged = None

    kappa = (cfg.omega * dt) ** 2 if cfg.scheme == "trbomd_n" else 0.0

    k = 0
    while k < n_steps:
        m_field, dm = system.fields_at(r_k)
        if cfg.scheme == "bomd_converged":
            seed = _extrapolate(conv_hist)
        elif cfg.scheme == "bomd_n":
            seed = seed_state
        else:
            seed = rho_k
        scf_out = rho_scf(system, m_field, seed, cfg.scf_policy)
        rbar = scf_out.density
        force = hf_force(grid, system.yukawa, dm, rbar, m_field)
        e_pot = total_energy(grid, system.yukawa, scf_out.solution, m_field)

        r_next = 2.0 * r_k - r_prev + dt**2 / mass * force
        if cfg.scheme == "trbomd_n":
            rho_next = 2.0 * rho_k - rho_prev + kappa * (rbar - rho_k)
        else:
            rho_next = rho_k

        v_k = (r_next - r_prev) / (2.0 * dt)
        e_tot = e_pot + 0.5 * mass * float(np.sum(v_k**2))

        finite = (
            np.all(np.isfinite(r_next))
            and np.all(np.isfinite(rho_next))
            and np.isfinite(e_tot)
        )
        if not finite:
            if cfg.allow_divergence:
                diverged = k
                break
            raise NonFinite(k)

        pos[k] = r_k
        vel[k] = v_k
        frc[k] = force
        ene[k] = e_tot
        its[k] = scf_out.iterations
        res[k] = scf_out.residual_history[-1]
        dmass[k] = grid.integrate(rbar)

        if cfg.record_density_dev and k % cfg.record_density_dev == 0:
            ref = rho_scf(
                system,
                m_field,
                rbar,
                ScfPolicy(
                    scheme=cfg.scf_policy.scheme,
                    alpha=cfg.scf_policy.alpha,
                    kerker_q0=cfg.scf_policy.kerker_q0,
                    mode=ToTolerance(cfg.density_dev_tol, cfg.bootstrap_max_iter),
                ),
            )
            dev_t.append(times[k])
            dev.append(grid.integrate(np.abs(rbar - ref.density)))

        if (
            cfg.max_energy_drift is not None
            and k > 0
            and abs(e_tot - ene[0]) / abs(ene[0]) > cfg.max_energy_drift
        ):
            stopped = k
            k += 1
            break

        if cfg.scheme == "bomd_converged":
            conv_hist.append(rbar.copy())
            if len(conv_hist) > 3:
                conv_hist.pop(0)
        elif cfg.scheme == "bomd_n":
            seed_state = rbar
        r_prev, r_k = r_k, r_next
        rho_prev, rho_k = rho_k, rho_next
        k += 1

    n_rec = k if diverged is None else diverged
    meta = {"scheme": cfg.scheme, "dt": dt}
    if cfg.scheme == "trbomd_n":
        meta["omega"] = cfg.omega
        meta["kappa"] = kappa
    if stopped is not None:
        meta["stopped_early"] = stopped
    if diverged is not None:
        meta["diverged_at"] = diverged
    return Trajectory(
        scheme=cfg.scheme,
        times=times[:n_rec],
        positions=pos[:n_rec],
        velocities=vel[:n_rec],
        energies=ene[:n_rec],
        forces=frc[:n_rec],
        scf_iterations=its[:n_rec],
        scf_residuals=res[:n_rec],
        density_mass=dmass[:n_rec],
        density_dev_times=np.array(dev_t),
        density_dev=np.array(dev),
        metadata=meta,
        final_state={
            "r": r_k.copy(),
            "r_prev": r_prev.copy(),
            "rho": rho_k.copy(),
            "rho_prev": rho_prev.copy(),
            "seed": (
                conv_hist[-1].copy()
                if cfg.scheme == "bomd_converged"
                else (seed_state.copy() if cfg.scheme == "bomd_n" else rho_k.copy())
            ),
        },
    )


def reversed_history(traj):
    """Swap the two-step tail of a run for a time-reversed continuation.

    Feeding the returned dict to run(..., history=...) with the same config
    propagates the map backward along its own trajectory.
    """
    fs = traj.final_state
    return {
        "r_prev": fs["r"],
        "rho": fs["rho_prev"],
        "rho_prev": fs["rho"],
        "seed": fs["seed"],
    }


def run_reversed(system, cfg, traj):
    """Retrace a finished trajectory backward from its swapped tail."""
    hist = reversed_history(traj)
    start = traj.final_state["r_prev"]
    return run(system, cfg, start, None, history=hist)
