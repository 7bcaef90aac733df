"""Linear-response machinery around a chain equilibrium.

Everything is finite differences on the actual solvers, no symbolic
derivatives: the dynamical matrix from displaced converged forces, the SCF
response Jacobian from density impulses through the (truncated) SCF drive,
the dielectric operator from the same impulses through the bare Kohn-Sham
map. From those come the error-contraction operator K = I - J, its
spectrum, the force-response functionals, and the leading-order shift of
each phonon frequency under auxiliary-density dynamics at frequency omega:

    Omega_l -> Omega_l (1 - v_l^T L [K^-1 [(drho*/dR) v_l]] / (2 omega^2))

The mass (q = 0) direction needs care: Kerker mixing never moves total
charge, so K has an exact zero eigenvalue there. Propagated density errors
carry zero total mass, which makes the charge-neutral subspace the
physically reachable one; lambda_min is therefore reported on that subspace
and the full-spectrum value kept alongside for inspection.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dft import hf_force, total_energy
from .errors import (
    GridMismatch,
    NotAtEquilibrium,
    ResonanceWarning,
    SingularGram,
    UnstableK,
)
from .scf import FixedSteps, ScfPolicy, ToTolerance, rho_scf

_ANALYSIS_TOL = 1e-10
_ANALYSIS_MAX_ITER = 3000


def _converged_policy(policy, tol=_ANALYSIS_TOL):
    return ScfPolicy(
        scheme=policy.scheme,
        alpha=policy.alpha,
        kerker_q0=policy.kerker_q0,
        mode=ToTolerance(tol, _ANALYSIS_MAX_ITER),
    )


def equilibrium_state(system, positions, policy):
    """Converged density and residual forces at a candidate equilibrium."""
    m_field, dm = system.fields_at(positions)
    seed = np.full(system.grid.n_points, system.n_electrons / system.grid.length)
    out = rho_scf(system, m_field, seed, _converged_policy(policy))
    force = hf_force(system.grid, system.yukawa, dm, out.density, m_field)
    return out.density, force


def curvature_scan(system, positions, policy, rho_star, h_r=1e-3):
    """Displaced-geometry pass: dynamical matrix and density sensitivity.

    One converged SCF per signed displacement, seeded with the equilibrium
    density. Returns (D, P) with D_IJ = -(1/mass) d f_I / d R_J symmetrized
    and P[:, J] = d rho* / d R_J.
    """
    m_atoms = system.n_atoms
    n = system.grid.n_points
    conv = _converged_policy(policy)
    d_mat = np.empty((m_atoms, m_atoms))
    p_mat = np.empty((n, m_atoms))
    for j in range(m_atoms):
        signed = []
        for sign in (+1.0, -1.0):
            r = np.asarray(positions, dtype=float).copy()
            r[j] += sign * h_r
            m_field, dm = system.fields_at(r)
            out = rho_scf(system, m_field, rho_star, conv)
            f = hf_force(system.grid, system.yukawa, dm, out.density, m_field)
            signed.append((f, out.density))
        (f_p, rho_p), (f_m, rho_m) = signed
        d_mat[:, j] = -(f_p - f_m) / (2.0 * h_r) / system.mass
        p_mat[:, j] = (rho_p - rho_m) / (2.0 * h_r)
    d_mat = 0.5 * (d_mat + d_mat.T)
    return d_mat, p_mat


def dynamical_matrix(system, positions, policy, h_r=1e-3, rho_star=None):
    """Curvature of the energy surface, as force differences at fixed h_r.

    Refuses to run unless residual forces at the center are below 1e-6,
    since the symmetrized second-order stencil assumes a stationary point.
    """
    if rho_star is None:
        rho_star, force = equilibrium_state(system, positions, policy)
    else:
        m_field, dm = system.fields_at(positions)
        force = hf_force(system.grid, system.yukawa, dm, rho_star, m_field)
    max_f = float(np.max(np.abs(force)))
    if max_f > 1e-6:
        raise NotAtEquilibrium(max_f)
    d_mat, _ = curvature_scan(system, positions, policy, rho_star, h_r)
    return d_mat


def phonon_modes(d_mat):
    """Frequencies (ascending) and orthonormal mode vectors of D."""
    vals, vecs = scipy.linalg.eigh(d_mat)
    omegas = np.sqrt(np.maximum(vals, 0.0))
    return omegas, vecs


def response_jacobian(system, positions, policy, rho_star, h_rho=None):
    """d rhoscf / d rho at the equilibrium, one impulse per grid node.

    The impulses are raw (their total mass is nonzero on purpose): how the
    drive treats the q = 0 component is part of the operator, and Kerker's
    refusal to move it shows up as a unit eigenvalue of J.
    """
    n = system.grid.n_points
    if h_rho is None:
        h_rho = 1e-4 * system.n_electrons / system.grid.length
    m_field, _ = system.fields_at(positions)
    jac = np.empty((n, n))
    for j in range(n):
        rp = rho_star.copy()
        rp[j] += h_rho
        out_p = rho_scf(system, m_field, rp, policy).density
        rm = rho_star.copy()
        rm[j] -= h_rho
        out_m = rho_scf(system, m_field, rm, policy).density
        jac[:, j] = (out_p - out_m) / (2.0 * h_rho)
    return jac


def dielectric_matrix(system, positions, rho_star, h_rho=None):
    """eps = I - dF/drho with F the bare Kohn-Sham map, by the same stencil."""
    n = system.grid.n_points
    if h_rho is None:
        h_rho = 1e-4 * system.n_electrons / system.grid.length
    m_field, _ = system.fields_at(positions)
    df = np.empty((n, n))
    for j in range(n):
        rp = rho_star.copy()
        rp[j] += h_rho
        out_p = system.ks(m_field, rp).out_density
        rm = rho_star.copy()
        rm[j] -= h_rho
        out_m = system.ks(m_field, rm).out_density
        df[:, j] = (out_p - out_m) / (2.0 * h_rho)
    return np.eye(n) - df


def neutral_basis(n):
    """Orthonormal basis of the zero-total-mass subspace, deterministic."""
    return scipy.linalg.null_space(np.ones((1, n)))


@dataclass
class KSpectrum:
    """Eigenstructure of the error-contraction operator K = I - J.

    eigenvalues is the full (complex) spectrum. lambda_min is the smallest
    real part over the charge-neutral subspace; lambda_min_full includes
    the q = 0 direction, which a Kerker drive pins at exactly zero.
    complex_flag marks imaginary parts above 1e-6, possible for
    preconditioned schemes where K need not be symmetric.
    """

    eigenvalues: np.ndarray
    lambda_min: float
    lambda_min_full: float
    max_imag: float
    complex_flag: bool


def k_operator_spectrum(jacobian):
    n = jacobian.shape[0]
    k_op = np.eye(n) - jacobian
    full = scipy.linalg.eigvals(k_op)
    q = neutral_basis(n)
    restricted = scipy.linalg.eigvals(q.T @ k_op @ q)
    max_imag = float(np.max(np.abs(full.imag)))
    return KSpectrum(
        eigenvalues=full,
        lambda_min=float(np.min(restricted.real)),
        lambda_min_full=float(np.min(full.real)),
        max_imag=max_imag,
        complex_flag=max_imag > 1e-6,
    )


def l_matrix(system, positions, jacobian):
    """Force response to a density perturbation, routed through the drive.

    Row I is -(1/mass) times the force covector of atom I composed with the
    SCF Jacobian; with this model's energy the covector is the screened
    field of the core gradient, h * K(dm/dR_I).
    """
    m_field, dm = system.fields_at(positions)
    grid = system.grid
    cov = np.array([grid.spacing * system.yukawa.apply(dm[i]) for i in range(system.n_atoms)])
    return -(cov @ jacobian) / system.mass


def solve_neutral(k_op, rhs, q=None):
    """Solve K y = rhs restricted to the zero-mass subspace."""
    if q is None:
        q = neutral_basis(k_op.shape[0])
    y_n = scipy.linalg.solve(q.T @ k_op @ q, q.T @ rhs)
    return q @ y_n


@dataclass
class LinearResponseReport:
    """Everything the stability and accuracy analysis produces at once."""

    omega: float
    dyn_matrix: np.ndarray
    phonon_freqs: np.ndarray
    phonon_modes: np.ndarray
    jacobian: np.ndarray
    dielectric: np.ndarray
    k_operator: np.ndarray
    k_spectrum: KSpectrum
    l_matrix: np.ndarray
    drho_dr: np.ndarray
    omega_tilde: np.ndarray
    lambda_min_k: float
    adiabatic_ratio: float


def perturbed_frequencies(report, omega):
    """Shifted phonon frequencies at auxiliary frequency omega.

    Demands a positive-definite error contraction on the neutral subspace
    and warns when omega is too close to the phonon band for the two-scale
    expansion to mean anything.
    """
    if report.lambda_min_k <= 0.0:
        raise UnstableK(report.lambda_min_k)
    lam_max_d = float(np.max(np.maximum(report.phonon_freqs, 0.0) ** 2))
    ratio = omega**2 * report.lambda_min_k / lam_max_d
    if ratio < 10.0:
        warnings.warn(
            f"adiabatic ratio {ratio:.2f} < 10: auxiliary dynamics not well "
            "separated from the phonon band",
            ResonanceWarning,
            stacklevel=2,
        )
    q = neutral_basis(report.k_operator.shape[0])
    out = np.empty(len(report.phonon_freqs))
    for l in range(len(report.phonon_freqs)):
        v = report.phonon_modes[:, l]
        y = solve_neutral(report.k_operator, report.drho_dr @ v, q)
        corr = float(v @ (report.l_matrix @ y))
        out[l] = report.phonon_freqs[l] * (1.0 - corr / (2.0 * omega**2))
    return out


def linear_response_report(
    system,
    policy,
    omega,
    positions=None,
    h_r=1e-3,
    h_rho=None,
):
    """Run the whole linear-response pipeline at one equilibrium.

    policy is the truncated drive under study (its fixed-step mode defines
    J); converged companions of the same scheme handle the equilibrium and
    displaced solves.
    """
    if positions is None:
        positions = system.equilibrium_positions()
    rho_star, force = equilibrium_state(system, positions, policy)
    max_f = float(np.max(np.abs(force)))
    if max_f > 1e-6:
        raise NotAtEquilibrium(max_f)
    d_mat, p_mat = curvature_scan(system, positions, policy, rho_star, h_r)
    freqs, modes = phonon_modes(d_mat)
    jac = response_jacobian(system, positions, policy, rho_star, h_rho)
    eps = dielectric_matrix(system, positions, rho_star, h_rho)
    k_op = np.eye(jac.shape[0]) - jac
    spectrum = k_operator_spectrum(jac)
    l_mat = l_matrix(system, positions, jac)
    lam_max_d = float(np.max(np.maximum(freqs, 0.0) ** 2))
    ratio = (
        omega**2 * spectrum.lambda_min / lam_max_d if lam_max_d > 0 else np.inf
    )
    report = LinearResponseReport(
        omega=omega,
        dyn_matrix=d_mat,
        phonon_freqs=freqs,
        phonon_modes=modes,
        jacobian=jac,
        dielectric=eps,
        k_operator=k_op,
        k_spectrum=spectrum,
        l_matrix=l_mat,
        drho_dr=p_mat,
        omega_tilde=np.full(len(freqs), np.nan),
        lambda_min_k=spectrum.lambda_min,
        adiabatic_ratio=ratio,
    )
    if spectrum.lambda_min > 0.0:
        report.omega_tilde = perturbed_frequencies(report, omega)
    return report


def adiabatic_check(report, omega=None, threshold=10.0):
    """(ratio, verdict): is the auxiliary frequency far above the band."""
    if report.lambda_min_k <= 0.0:
        raise UnstableK(report.lambda_min_k)
    if omega is None:
        ratio = report.adiabatic_ratio
    else:
        lam_max_d = float(np.max(np.maximum(report.phonon_freqs, 0.0) ** 2))
        ratio = omega**2 * report.lambda_min_k / lam_max_d
    return ratio, bool(ratio > threshold)


def assembled_generator(
    system, policy, omega, positions, rho_star, h_r=1e-3, h_rho=None
):
    """Generator of the full coupled linearization, by brute finite difference.

    State is (atom displacements u, density deviation e); the second-order
    system (u'', e'') = A (u, e) is differenced directly on the nonlinear
    maps (force through the drive, drive residual times omega^2), so the
    result is independent of every analytic step the perturbation formula
    takes. Used as the oracle for perturbed_frequencies.
    """
    m_atoms = system.n_atoms
    n = system.grid.n_points
    if h_rho is None:
        h_rho = 1e-4 * system.n_electrons / system.grid.length
    if not isinstance(policy.mode, FixedSteps):
        raise ValueError("assembled generator needs a fixed-step policy")

    def field(u, e):
        r = positions + u
        m_field, dm = system.fields_at(r)
        rbar = rho_scf(system, m_field, rho_star + e, policy).density
        acc = hf_force(system.grid, system.yukawa, dm, rbar, m_field) / system.mass
        drive = omega**2 * (rbar - (rho_star + e))
        return np.concatenate([acc, drive])

    dim = m_atoms + n
    a_mat = np.empty((dim, dim))
    zero_u = np.zeros(m_atoms)
    zero_e = np.zeros(n)
    for j in range(m_atoms):
        u = zero_u.copy()
        u[j] = h_r
        fp = field(u, zero_e)
        u[j] = -h_r
        fm = field(u, zero_e)
        a_mat[:, j] = (fp - fm) / (2.0 * h_r)
    for j in range(n):
        e = zero_e.copy()
        e[j] = h_rho
        fp = field(zero_u, e)
        e[j] = -h_rho
        fm = field(zero_u, e)
        a_mat[:, m_atoms + j] = (fp - fm) / (2.0 * h_rho)
    return a_mat


def slow_mode_frequencies(a_mat, phonon_modes_mat):
    """Match each phonon mode to an eigenpair of the assembled generator.

    Scores eigenvectors by the overlap of their displacement block with the
    phonon mode vector; returns sqrt(-Re lambda) for the best match of each
    mode.
    """
    m_atoms = phonon_modes_mat.shape[0]
    vals, vecs = scipy.linalg.eig(a_mat)
    freqs = np.empty(m_atoms)
    for l in range(m_atoms):
        v = phonon_modes_mat[:, l]
        scores = np.abs(v @ vecs[:m_atoms, :]) / np.linalg.norm(vecs, axis=0)
        best = int(np.argmax(scores))
        freqs[l] = np.sqrt(max(-vals[best].real, 0.0))
    return freqs


@dataclass
class HookeFit:
    """Least-squares stiffness extracted from a trajectory.

    d_matrix solves forces = -mass * D * displacements in the covariance
    sense; on a single-mode trajectory the displacement Gram is rank 1 and
    only the excited mode's frequency is meaningful, which effective_rank
    records.
    """

    d_matrix: np.ndarray
    frequencies: np.ndarray
    modes: np.ndarray
    effective_rank: int
    condition_number: float


def hooke_fit(traj, eq_positions, mass, rank_tol=1e-10):
    disp = traj.positions - np.asarray(eq_positions)[None, :]
    s_fr = traj.forces.T @ disp
    s_rr = disp.T @ disp
    vals, vecs = scipy.linalg.eigh(s_rr)
    cutoff = rank_tol * float(np.max(vals)) if np.max(vals) > 0 else np.inf
    keep = vals > cutoff
    rank = int(np.sum(keep))
    if rank == 0:
        raise SingularGram("displacement covariance is numerically zero")
    inv = (vecs[:, keep] / vals[keep][None, :]) @ vecs[:, keep].T
    d_mat = -(s_fr @ inv) / mass
    sym = 0.5 * (d_mat + d_mat.T)
    freqs, modes = phonon_modes(sym)
    return HookeFit(
        d_matrix=d_mat,
        frequencies=freqs,
        modes=modes,
        effective_rank=rank,
        condition_number=float(np.max(vals[keep]) / np.min(vals[keep])),
    )


def mode_frequency(fit, pattern):
    """Frequency of the fitted mode best aligned with a given pattern."""
    p = np.asarray(pattern, dtype=float)
    p = p / np.linalg.norm(p)
    overlaps = np.abs(p @ fit.modes)
    return float(fit.frequencies[int(np.argmax(overlaps))])


def dominant_pattern(traj, eq_positions):
    """Leading principal direction of the displacement history."""
    disp = traj.positions - np.asarray(eq_positions)[None, :]
    disp = disp - disp.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(disp, full_matrices=False)
    return vt[0]


@dataclass
class MetricsReport:
    err_omega_hooke: float
    err_omega_lr: float
    err_ebar: float
    err_r_l2: float
    err_r_linf: float
    omega_ref: float
    omega_hooke: float
    omega_lr: float
    ebar: float
    ebar_ref: float


def metrics(traj, ref_traj, eq_positions, mass, report=None, omega=None, pattern=None):
    """The five relative errors of a run against a reference run.

    Frequencies come from stiffness fits of each trajectory (same
    estimator, so integrator bias cancels); the linear-response frequency
    uses `report` and `omega` when given. Position errors are L2 and sup
    norms of the first atom's series, normalized by the reference series.
    """
    if len(traj.times) != len(ref_traj.times) or not np.allclose(
        traj.times, ref_traj.times
    ):
        raise GridMismatch("trajectories do not share a time grid")
    if pattern is None:
        pattern = dominant_pattern(ref_traj, eq_positions)

    fit_ref = hooke_fit(ref_traj, eq_positions, mass)
    fit_run = hooke_fit(traj, eq_positions, mass)
    omega_ref = mode_frequency(fit_ref, pattern)
    omega_run = mode_frequency(fit_run, pattern)
    err_hooke = (omega_run - omega_ref) / omega_ref

    err_lr = np.nan
    omega_lr = np.nan
    if report is not None and omega is not None:
        tilde = perturbed_frequencies(report, omega)
        overlaps = np.abs(
            (np.asarray(pattern) / np.linalg.norm(pattern)) @ report.phonon_modes
        )
        omega_lr = float(tilde[int(np.argmax(overlaps))])
        err_lr = (omega_lr - omega_ref) / omega_ref

    ebar = float(np.mean(traj.energies))
    ebar_ref = float(np.mean(ref_traj.energies))
    err_ebar = (ebar - ebar_ref) / ebar_ref

    r1 = traj.positions[:, 0]
    r1_ref = ref_traj.positions[:, 0]
    err_l2 = float(np.linalg.norm(r1 - r1_ref) / np.linalg.norm(r1_ref))
    err_linf = float(np.max(np.abs(r1 - r1_ref)) / np.max(np.abs(r1_ref)))
    return MetricsReport(
        err_omega_hooke=err_hooke,
        err_omega_lr=err_lr,
        err_ebar=err_ebar,
        err_r_l2=err_l2,
        err_r_linf=err_linf,
        omega_ref=omega_ref,
        omega_hooke=omega_run,
        omega_lr=omega_lr,
        ebar=ebar,
        ebar_ref=ebar_ref,
    )
