"""Scalar warm-up model for truncated-force dynamics.

A single oscillator x with exact force f(x) = -Omega^2 (x - x*) - a (x - x*)^3
is driven not by f but by a cheap approximation g(x, s): k damped iterations
of s <- s + alpha (f(x) - s). The guess s gets its own oscillator dynamics

    x'' = g(x, s)
    s'' = omega^2 (g(x, s) - s)

so the pair mimics a molecular dynamics loop that never converges its force
solve. Everything here has closed forms, which makes the module the oracle
for the perturbation analysis used on the real model: the linearization, its
eigenvalues, and the O(omega^-2) frequency shift are all checkable by hand.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import Escaped, NonFinite, UnstableK


@dataclass(frozen=True)
class ToyModel:
    """Oscillator parameters and the force-approximation knobs.

    omega_cap is the bare frequency Omega of the exact force; alpha in (0,1]
    and k_steps >= 1 define the damped iteration; anharmonic_a adds the
    cubic tilt used by the escape demo (0 disables it).
    """

    omega_cap: float
    x_star: float = 0.0
    alpha: float = 1.0
    k_steps: int = 1
    anharmonic_a: float = 0.0

    def __post_init__(self):
        if self.omega_cap <= 0:
            raise ValueError("omega_cap must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.k_steps < 1:
            raise ValueError("k_steps must be at least 1")
        if self.anharmonic_a < 0:
            raise ValueError("anharmonic_a must be >= 0")

    def exact_force(self, x):
        u = x - self.x_star
        return -self.omega_cap**2 * u - self.anharmonic_a * u**3

    def force_slope(self, x):
        """f'(x); at x_star this is just -Omega^2."""
        u = x - self.x_star
        return -self.omega_cap**2 - 3.0 * self.anharmonic_a * u**2


@dataclass
class ToyState:
    x: float
    v: float
    s: float
    s_dot: float
    t: float = 0.0

    def __post_init__(self):
        if not all(
            math.isfinite(val) for val in (self.x, self.v, self.s, self.s_dot, self.t)
        ):
            raise ValueError("state values must be finite")


@dataclass
class ToyTrajectory:
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray


@dataclass
class ToyLinearization:
    """Linearization around (x*, 0) in (position, guess-error) variables.

    l_coeff is the sensitivity of the approximation to its seed,
    (1 - alpha)^k for the damped iteration; k_coeff = 1 - l_coeff is the
    per-call error contraction. a_matrix generates the second-order system
    y'' = A y; eigenvalues holds (slow, fast) roots of its characteristic
    polynomial, slow meaning closer to -Omega^2.
    """

    l_coeff: float
    k_coeff: float
    a_matrix: np.ndarray
    eigenvalues: tuple


def toy_g(model, x, s):
    """k_steps damped iterations toward the exact force, from seed s.

    Fixed point property: if s already equals f(x) the iteration does not
    move, so g(x, f(x)) = f(x) for every (alpha, k).
    """
    f = model.exact_force(x)
    for _ in range(model.k_steps):
        s = s + model.alpha * (f - s)
    return s


def toy_linearize(model, omega):
    """Assemble the 2x2 generator of the linearized (x, guess-error) system."""
    l_coeff = (1.0 - model.alpha) ** model.k_steps
    k_coeff = 1.0 - l_coeff
    fp = model.force_slope(model.x_star)
    om2 = model.omega_cap**2
    a = np.array(
        [
            [-om2, l_coeff],
            [fp * om2, -fp * l_coeff - omega**2 * k_coeff],
        ]
    )
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = tr * tr - 4.0 * det
    root = np.sqrt(complex(disc))
    lam_hi = 0.5 * (tr + root)
    lam_lo = 0.5 * (tr - root)
    # slow mode is the root nearer the bare -Omega^2
    if abs(lam_hi - (-om2)) <= abs(lam_lo - (-om2)):
        eigs = (lam_hi, lam_lo)
    else:
        eigs = (lam_lo, lam_hi)
    return ToyLinearization(
        l_coeff=l_coeff, k_coeff=k_coeff, a_matrix=a, eigenvalues=eigs
    )


def toy_perturbed_freq(lin, omega, f_prime):
    """Leading-order shifted frequencies of the slow and fast normal modes.

    Returns (Omega_tilde, omega_tilde). Valid when the guess oscillator is
    much faster than the physical one; the correction term is O(omega^-2).
    """
    if lin.k_coeff <= 0.0:
        raise UnstableK(lin.k_coeff)
    om_cap = math.sqrt(-lin.a_matrix[0, 0])
    shift = f_prime * lin.l_coeff / lin.k_coeff / (2.0 * omega**2)
    omega_cap_tilde = om_cap * (1.0 - shift)
    omega_tilde = math.sqrt(lin.k_coeff) * omega * (1.0 + shift)
    return omega_cap_tilde, omega_tilde


def toy_simulate(model, omega, dt, n_steps, init):
    """Two-step Verlet on the coupled (x, s) system.

    The first step is seeded by a second-order Taylor expansion so the
    scheme keeps its O(dt^2) accuracy. Velocities are reported as centered
    differences, which is what makes the reversibility check exact.
    """
    if (omega * dt) ** 2 >= 4.0:
        raise ValueError(
            f"(omega*dt)^2 = {(omega * dt) ** 2:.3g} >= 4: guess oscillator "
            "unstable under Verlet at this step"
        )
    times = init.t + dt * np.arange(n_steps)
    xs = np.empty(n_steps)
    vs = np.empty(n_steps)
    ss = np.empty(n_steps)
    sds = np.empty(n_steps)

    x, s = init.x, init.s
    g0 = toy_g(model, x, s)
    x_prev = x - dt * init.v + 0.5 * dt**2 * g0
    s_prev = s - dt * init.s_dot + 0.5 * dt**2 * omega**2 * (g0 - s)
    for k in range(n_steps):
        g = toy_g(model, x, s)
        x_next = 2.0 * x - x_prev + dt**2 * g
        s_next = 2.0 * s - s_prev + dt**2 * omega**2 * (g - s)
        if not (math.isfinite(x_next) and math.isfinite(s_next)):
            raise NonFinite(k, "toy state")
        xs[k] = x
        ss[k] = s
        vs[k] = (x_next - x_prev) / (2.0 * dt)
        sds[k] = (s_next - s_prev) / (2.0 * dt)
        x_prev, x = x, x_next
        s_prev, s = s, s_next
    return ToyTrajectory(times=times, x=xs, v=vs, s=ss, s_dot=sds)


def toy_reverse_step(model, omega, dt, x, x_prev, s, s_prev, n_steps):
    """Run the bare two-step map forward from an explicit history pair.

    Exposed for the reversibility check: feeding the last two states in
    swapped order retraces a forward trajectory. Returns the full (x, s)
    history including the two seed states.
    """
    xs = [x_prev, x]
    ss = [s_prev, s]
    for k in range(n_steps):
        g = toy_g(model, x, s)
        x_next = 2.0 * x - x_prev + dt**2 * g
        s_next = 2.0 * s - s_prev + dt**2 * omega**2 * (g - s)
        if not (math.isfinite(x_next) and math.isfinite(s_next)):
            raise NonFinite(k, "toy state")
        x_prev, x = x, x_next
        s_prev, s = s, s_next
        xs.append(x)
        ss.append(s)
    return np.array(xs), np.array(ss)


def anharmonic_barrier(a):
    """Crest position and height of V(xi) = xi^2/4 - a xi^3/3."""
    xi_b = 1.0 / (2.0 * a)
    v_b = 1.0 / (48.0 * a**2)
    return xi_b, v_b


def toy_anharmonic_average(a, xi0, horizon, dt):
    """Time average of xi under xi'' = -xi/2 + a xi^2, started at rest.

    The well is tilted, so bound orbits spend more time on the shallow
    (positive) side and the average comes out positive. Orbits that reach
    the crest xi = 1/(2a) roll away; that raises Escaped with the crossing
    time rather than returning a meaningless average.
    """
    if a <= 0:
        raise ValueError("need a > 0")
    xi_b, _ = anharmonic_barrier(a)
    n_steps = int(round(horizon / dt))
    xi = xi0
    acc = -0.5 * xi + a * xi**2
    xi_prev = xi - 0.5 * dt**2 * acc
    total = 0.0
    for k in range(n_steps):
        if xi > xi_b:
            raise Escaped(k * dt)
        total += xi
        acc = -0.5 * xi + a * xi**2
        xi_next = 2.0 * xi - xi_prev + dt**2 * acc
        if not math.isfinite(xi_next):
            raise NonFinite(k, "anharmonic state")
        xi_prev, xi = xi, xi_next
    return total / n_steps
