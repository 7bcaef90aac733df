"""Self-consistency drivers: damped fixed-point iteration on the density.

One SCF step applies the Kohn-Sham map and moves the density along the
(optionally preconditioned) residual:

    rho <- rho + alpha P (F[rho] - rho)

The driver either runs a fixed number of such steps, which is itself a
smooth map of the seed density and the geometry, or iterates to a residual
tolerance. Both paths share the same step so truncated and converged
propagation stay comparable.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged


@dataclass(frozen=True)
class FixedSteps:
    """Run exactly `count` mixing steps; no convergence claim."""

    count: int


@dataclass(frozen=True)
class ToTolerance:
    """Iterate until the residual norm drops below tol.

    Raises NotConverged when max_iter Kohn-Sham evaluations are exhausted.
    """

    tol: float
    max_iter: int = 200


@dataclass(frozen=True)
class ScfPolicy:
    """Mixing recipe: scheme, damping, stop mode, preconditioner knob.

    scheme is one of
      "simple"       rho + alpha r
      "kerker"       rho + alpha P r with P(q) = q^2 / (q^2 + q0^2)
      "fixed_point"  F[rho], plain substitution (alpha ignored)

    The Kerker filter kills the long-wavelength part of the update, the
    standard cure for charge sloshing; note P(0) = 0 means it never moves
    total charge, so the q = 0 component of the seed is pinned.
    """

    scheme: str = "kerker"
    alpha: float = 0.3
    mode: object = None
    kerker_q0: float = 0.5

    def __post_init__(self):
        if self.scheme == "kerker_simple":
            object.__setattr__(self, "scheme", "kerker")
        if self.scheme not in ("simple", "kerker", "fixed_point"):
            raise ValueError(f"unknown mixing scheme '{self.scheme}'")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.mode is None:
            object.__setattr__(self, "mode", ToTolerance(1e-8))
        if not isinstance(self.mode, (FixedSteps, ToTolerance)):
            raise ValueError("mode must be FixedSteps or ToTolerance")
        if isinstance(self.mode, FixedSteps) and self.mode.count < 1:
            raise ValueError("fixed-step count must be at least 1")
        if isinstance(self.mode, ToTolerance) and self.mode.tol <= 0:
            raise ValueError("tolerance must be positive")


def kerker_multiplier(grid, q0):
    q2 = grid.wavenumbers**2
    return q2 / (q2 + q0**2)


def mix_residual(grid, policy, residual):
    """The density increment a single step adds for a given raw residual."""
    if policy.scheme == "simple":
        return policy.alpha * residual
    if policy.scheme == "kerker":
        filtered = np.fft.ifft(
            kerker_multiplier(grid, policy.kerker_q0) * np.fft.fft(residual)
        ).real
        return policy.alpha * filtered
    # fixed_point: full replacement, increment is the whole residual
    return residual


def scf_step(system, m_field, rho, policy):
    """One damped iteration. Returns (rho_next, solution, residual_norm)."""
    sol = system.ks(m_field, rho)
    residual = sol.out_density - rho
    res_norm = system.grid.norm(residual)
    rho_next = rho + mix_residual(system.grid, policy, residual)
    return rho_next, sol, res_norm


@dataclass
class ScfResult:
    """Outcome of an SCF drive.

    density is the driver's output density: the mixed iterate for fixed-step
    runs, the accepted (sub-tolerance) iterate for converged runs.
    iterations counts Kohn-Sham evaluations. solution is the KsSolution from
    the last evaluation; its out_density generally differs from `density` by
    up to one mixing increment.
    """

    density: np.ndarray
    iterations: int
    residual_history: np.ndarray
    converged: bool
    solution: object


def rho_scf(system, m_field, rho0, policy):
    """Drive the SCF map from seed rho0 under the policy's stop mode."""
    rho = np.asarray(rho0, dtype=float)
    history = []
    if isinstance(policy.mode, FixedSteps):
        sol = None
        for _ in range(policy.mode.count):
            rho, sol, res = scf_step(system, m_field, rho, policy)
            history.append(res)
        return ScfResult(
            density=rho,
            iterations=policy.mode.count,
            residual_history=np.array(history),
            converged=False,
            solution=sol,
        )
    tol = policy.mode.tol
    for it in range(1, policy.mode.max_iter + 1):
        rho_next, sol, res = scf_step(system, m_field, rho, policy)
        history.append(res)
        if res < tol:
            return ScfResult(
                density=rho,
                iterations=it,
                residual_history=np.array(history),
                converged=True,
                solution=sol,
            )
        rho = rho_next
    raise NotConverged(policy.mode.max_iter, history[-1], tol)


def equilibrium_density(system, positions=None, policy=None):
    """Converged ground-state density at a geometry, from a neutralizing seed.

    The seed is the uniform density with total charge n_electrons, which has
    the correct q = 0 component for Kerker mixing.
    """
    if positions is None:
        positions = system.equilibrium_positions()
    if policy is None:
        policy = ScfPolicy(mode=ToTolerance(1e-10, 3000))
    m_field, _ = system.fields_at(positions)
    rho0 = np.full(system.grid.n_points, system.n_electrons / system.grid.length)
    return rho_scf(system, m_field, rho0, policy)
