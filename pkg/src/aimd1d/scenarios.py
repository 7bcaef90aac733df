"""Experiment drivers behind the command line: one function per scenario.

Every scenario builds its model from an ExperimentConfig, runs the needed
propagations and analyses, and writes CSV series plus a key,value summary
into the output directory. All files carry the full effective config as
'#'-prefixed metadata so a result is always reproducible from its own
header. Output is deterministic: fixed formats, fixed orderings, and sweep
results are joined in list order regardless of how they were dispatched.
"""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dft import build_system, total_energy
from .errors import ConfigError, UnresolvedGaussian, UnstableK
from .md import MdConfig, init_kick, init_single_phonon, run
from .response import (
    adiabatic_check,
    dominant_pattern,
    hooke_fit,
    linear_response_report,
    metrics,
    mode_frequency,
    perturbed_frequencies,
)
from .scf import FixedSteps, ScfPolicy, ToTolerance, rho_scf
from .toymodel import (
    ToyModel,
    ToyState,
    toy_anharmonic_average,
    toy_g,
    toy_linearize,
    toy_perturbed_freq,
    toy_simulate,
)
from .errors import Escaped

# a sweep point counts as inside the stable range when omega^2 exceeds this
# multiple of the critical value lambda_max(D)/lambda_min(K)
STABLE_MARGIN = 3.0


def system_from_config(cfg):
    try:
        system = build_system(
            n_atoms=cfg.n_atoms,
            spacing=cfg.spacing,
            points_per_atom=cfg.points_per_atom,
            mass=cfg.mass,
            kappa=cfg.kappa,
            eps0=cfg.eps0,
            charge=cfg.charge,
            width=cfg.sigma,
            occ_width=cfg.occ_width,
        )
        # touch the core fields once so resolvability problems surface here
        system.fields_at(system.equilibrium_positions())
    except UnresolvedGaussian as exc:
        raise ConfigError(
            f"{exc} (pseudocharge resolvability precondition)", field="sigma"
        ) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return system


def fixed_policy(cfg):
    """The truncated drive under study: n_scf mixing steps per call."""
    return ScfPolicy(
        scheme=cfg.scf_scheme,
        alpha=cfg.scf_alpha,
        kerker_q0=cfg.scf_q0,
        mode=FixedSteps(cfg.n_scf),
    )


def converged_policy(cfg):
    """The converged-SCF recipe used for references and bootstraps."""
    return ScfPolicy(
        scheme=cfg.ref_scf_scheme,
        alpha=cfg.ref_scf_alpha,
        kerker_q0=cfg.ref_scf_q0,
        mode=ToTolerance(cfg.ref_scf_tol, cfg.ref_scf_max_iter),
    )


def _h_rho(cfg):
    return cfg.h_rho if cfg.h_rho > 0 else None


def _meta(cfg, extra=None):
    lines = [f"# {line}" for line in cfg.echo_lines()]
    for key, val in (extra or {}).items():
        lines.append(f"# {key} = {val}")
    return lines


def _write_rows(path, meta_lines, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in meta_lines:
            fh.write(line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_trajectory(path, traj, cfg, extra=None):
    n, m_atoms = traj.positions.shape
    dev_col = np.full(n, np.nan)
    if len(traj.density_dev_times):
        idx = np.rint(traj.density_dev_times / traj.metadata["dt"]).astype(int)
        ok = idx < n
        dev_col[idx[ok]] = traj.density_dev[ok]
    header = (
        ["time"]
        + [f"pos_{i + 1}" for i in range(m_atoms)]
        + [f"vel_{i + 1}" for i in range(m_atoms)]
        + ["total_energy", "scf_residual", "density_dev"]
    )
    rows = np.column_stack(
        [
            traj.times,
            traj.positions,
            traj.velocities,
            traj.energies,
            traj.scf_residuals,
            dev_col,
        ]
    )
    meta = dict(extra or {})
    meta.setdefault("scheme", traj.scheme)
    for key in ("stopped_early", "diverged_at", "omega", "mu"):
        if key in traj.metadata:
            meta[key] = traj.metadata[key]
    _write_rows(path, _meta(cfg, meta), header, rows)


def write_summary(path, cfg, entries):
    rows = [(k, _fmt(v)) for k, v in entries.items()]
    _write_rows(path, _meta(cfg), ["key", "value"], rows)


def _drift_stats(traj):
    drift = traj.energy_drift()
    out = {
        "drift_final": drift[-1] if len(drift) else np.nan,
        "drift_max": float(np.max(drift)) if len(drift) else np.nan,
        "steps_completed": traj.n_steps,
    }
    # block-mean monotonicity: a real secular drift moves one way
    if len(traj.energies) >= 20:
        blocks = np.array_split(traj.energies, 10)
        means = np.array([b.mean() for b in blocks])
        diffs = np.diff(means)
        out["drift_monotone"] = bool(np.all(diffs > 0) or np.all(diffs < 0))
    else:
        out["drift_monotone"] = False
    return out


def _metric_entries(rep, prefix=""):
    if rep is None:
        keys = ("err_omega_hooke", "err_omega_lr", "err_ebar", "err_r_l2", "err_r_linf")
        return {prefix + k: np.nan for k in keys}
    return {
        prefix + "err_omega_hooke": rep.err_omega_hooke,
        prefix + "err_omega_lr": rep.err_omega_lr,
        prefix + "err_ebar": rep.err_ebar,
        prefix + "err_r_l2": rep.err_r_l2,
        prefix + "err_r_linf": rep.err_r_linf,
    }


def scenario_drift(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    v0 = init_single_phonon(cfg.n_atoms, cfg.t_ion, cfg.mass)
    ref_steps = cfg.ref_steps if cfg.ref_steps > 0 else cfg.n_steps

    ref = run(
        system,
        MdConfig(cfg.dt, ref_steps, "bomd_converged", converged_policy(cfg)),
        r0,
        v0,
    )
    bn = run(
        system,
        MdConfig(cfg.dt, cfg.n_steps, "bomd_n", fixed_policy(cfg)),
        r0,
        v0,
    )
    tr = run(
        system,
        MdConfig(cfg.dt, cfg.n_steps, "trbomd_n", fixed_policy(cfg), omega=cfg.omega),
        r0,
        v0,
    )
    write_trajectory(os.path.join(out_dir, "bomd_converged.csv"), ref, cfg)
    write_trajectory(os.path.join(out_dir, "bomd_n.csv"), bn, cfg)
    write_trajectory(os.path.join(out_dir, "trbomd_n.csv"), tr, cfg)

    report = linear_response_report(
        system, fixed_policy(cfg), cfg.omega, h_r=cfg.h_r, h_rho=_h_rho(cfg)
    )
    same_grid = ref_steps == cfg.n_steps
    rep_tr = (
        metrics(tr, ref, r0, cfg.mass, report=report, omega=cfg.omega)
        if same_grid
        else None
    )
    rep_bn = metrics(bn, ref, r0, cfg.mass) if same_grid else None

    summary = {}
    for name, traj in (("bomd_converged", ref), ("bomd_n", bn), ("trbomd_n", tr)):
        for key, val in _drift_stats(traj).items():
            summary[f"{name}_{key}"] = val
    summary["err_ebar_trbomd_vs_ref"] = (
        np.mean(tr.energies) - np.mean(ref.energies)
    ) / np.mean(ref.energies)
    summary["err_ebar_bomd_n_vs_ref"] = (
        np.mean(bn.energies) - np.mean(ref.energies)
    ) / np.mean(ref.energies)
    summary["drift_ratio_bomd_n_over_trbomd"] = (
        summary["bomd_n_drift_final"] / summary["trbomd_n_drift_final"]
        if summary["trbomd_n_drift_final"] > 0
        else np.inf
    )
    summary.update(_metric_entries(rep_tr, "trbomd_"))
    summary.update(_metric_entries(rep_bn, "bomd_n_"))
    summary["lambda_min_k"] = report.lambda_min_k
    summary["lambda_min_k_full"] = report.k_spectrum.lambda_min_full
    summary["adiabatic_ratio"] = report.adiabatic_ratio
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def scenario_trajectory(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    v0 = init_single_phonon(cfg.n_atoms, cfg.t_ion, cfg.mass)
    if cfg.scheme == "bomd_converged":
        mdcfg = MdConfig(cfg.dt, cfg.n_steps, cfg.scheme, converged_policy(cfg))
    elif cfg.scheme == "cpmd":
        mdcfg = MdConfig(
            cfg.dt, cfg.n_steps, "cpmd", converged_policy(cfg), mu=cfg.mu
        )
    else:
        mdcfg = MdConfig(
            cfg.dt,
            cfg.n_steps,
            cfg.scheme,
            fixed_policy(cfg),
            omega=cfg.omega if cfg.scheme == "trbomd_n" else None,
        )
    traj = run(system, mdcfg, r0, v0)
    write_trajectory(os.path.join(out_dir, "trajectory.csv"), traj, cfg)
    fit = hooke_fit(traj, r0, cfg.mass)
    pattern = dominant_pattern(traj, r0)
    summary = dict(_drift_stats(traj))
    summary["mean_energy"] = float(np.mean(traj.energies))
    summary["mode_frequency_hooke"] = mode_frequency(fit, pattern)
    summary["mean_scf_iterations"] = float(np.mean(traj.scf_iterations))
    summary["max_scf_iterations"] = int(np.max(traj.scf_iterations))
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def _sweep_worker(args):
    system, mdcfg, r0, v0 = args
    return run(system, mdcfg, r0, v0)


def _pmap(worker, jobs, threads):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, jobs))
    return [worker(j) for j in jobs]


def scenario_omega_sweep(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    v0 = init_single_phonon(cfg.n_atoms, cfg.t_ion, cfg.mass)

    ref = run(
        system,
        MdConfig(cfg.dt, cfg.n_steps, "bomd_converged", converged_policy(cfg)),
        r0,
        v0,
    )
    write_trajectory(os.path.join(out_dir, "bomd_converged.csv"), ref, cfg)

    report = linear_response_report(
        system,
        fixed_policy(cfg),
        float(np.sqrt(cfg.omega2_list[0])),
        h_r=cfg.h_r,
        h_rho=_h_rho(cfg),
    )
    lam_max_d = float(np.max(report.phonon_freqs**2))
    critical = lam_max_d / report.lambda_min_k if report.lambda_min_k > 0 else np.inf

    jobs = []
    for om2 in cfg.omega2_list:
        mdcfg = MdConfig(
            cfg.dt,
            cfg.n_steps,
            "trbomd_n",
            fixed_policy(cfg),
            omega=float(np.sqrt(om2)),
            allow_divergence=True,
            max_energy_drift=1.0,
        )
        jobs.append((system, mdcfg, r0, v0))
    runs = _pmap(_sweep_worker, jobs, threads)

    rows = []
    log_err_h, log_err_e, log_x = [], [], []
    for om2, traj in zip(cfg.omega2_list, runs):
        omega = float(np.sqrt(om2))
        stable = om2 >= STABLE_MARGIN * critical
        completed = traj.n_steps == cfg.n_steps and "diverged_at" not in traj.metadata
        write_trajectory(
            os.path.join(out_dir, f"trbomd_omega2_{om2:.3e}.csv"),
            traj,
            cfg,
            {"omega2": om2},
        )
        if completed:
            rep = metrics(traj, ref, r0, cfg.mass, report=report, omega=omega)
            err_h, err_e, err_lr = rep.err_omega_hooke, rep.err_ebar, rep.err_omega_lr
        else:
            err_h = err_e = err_lr = np.nan
        rows.append(
            [
                om2,
                err_h,
                err_e,
                err_lr,
                om2 / critical if np.isfinite(critical) else np.inf,
                stable,
                traj.metadata.get("diverged_at", -1),
                traj.n_steps,
            ]
        )
        if stable and completed and abs(err_h) > 0 and abs(err_e) > 0:
            log_x.append(np.log10(1.0 / om2))
            log_err_h.append(np.log10(abs(err_h)))
            log_err_e.append(np.log10(abs(err_e)))
    _write_rows(
        os.path.join(out_dir, "sweep.csv"),
        _meta(cfg, {"critical_omega2": critical}),
        [
            "omega2",
            "err_omega_hooke",
            "err_ebar",
            "err_omega_lr",
            "omega2_over_critical",
            "stable",
            "diverged_at",
            "steps_completed",
        ],
        rows,
    )
    summary = {
        "critical_omega2": critical,
        "lambda_min_k": report.lambda_min_k,
        "n_stable_points": len(log_x),
    }
    if len(log_x) >= 2:
        summary["slope_err_omega_hooke"] = float(
            np.polyfit(log_x, log_err_h, 1)[0]
        )
        summary["slope_err_ebar"] = float(np.polyfit(log_x, log_err_e, 1)[0])
    else:
        summary["slope_err_omega_hooke"] = np.nan
        summary["slope_err_ebar"] = np.nan
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def scenario_stability(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    report = linear_response_report(
        system, fixed_policy(cfg), cfg.omega, h_r=cfg.h_r, h_rho=_h_rho(cfg)
    )
    spec_rows = [
        [ev.real, ev.imag] for ev in np.sort_complex(report.k_spectrum.eigenvalues)
    ]
    _write_rows(
        os.path.join(out_dir, "k_spectrum.csv"),
        _meta(cfg),
        ["re", "im"],
        spec_rows,
    )
    _write_rows(
        os.path.join(out_dir, "phonons.csv"),
        _meta(cfg),
        ["mode", "omega", "omega_tilde"],
        [
            [l, report.phonon_freqs[l], report.omega_tilde[l]]
            for l in range(len(report.phonon_freqs))
        ],
    )
    _write_rows(
        os.path.join(out_dir, "dyn_matrix.csv"),
        _meta(cfg),
        [f"col_{j + 1}" for j in range(report.dyn_matrix.shape[1])],
        report.dyn_matrix,
    )
    summary = {
        "lambda_min_k": report.lambda_min_k,
        "lambda_min_k_full": report.k_spectrum.lambda_min_full,
        "max_imag_k": report.k_spectrum.max_imag,
        "complex_flag": report.k_spectrum.complex_flag,
        "adiabatic_ratio": report.adiabatic_ratio,
        "lambda_max_d": float(np.max(report.phonon_freqs**2)),
    }
    if report.lambda_min_k > 0:
        ratio, ok = adiabatic_check(report)
        summary["adiabatic_ok"] = ok
    if cfg.probe_steps > 0:
        r0 = system.equilibrium_positions()
        v0 = init_single_phonon(cfg.n_atoms, cfg.t_ion, cfg.mass)
        probe = run(
            system,
            MdConfig(
                cfg.dt,
                cfg.probe_steps,
                "trbomd_n",
                fixed_policy(cfg),
                omega=cfg.omega,
                allow_divergence=True,
                max_energy_drift=1e-2,
            ),
            r0,
            v0,
        )
        write_trajectory(os.path.join(out_dir, "probe.csv"), probe, cfg)
        summary["probe_steps_completed"] = probe.n_steps
        summary["probe_diverged_at"] = probe.metadata.get("diverged_at", -1)
        summary["probe_stopped_early"] = probe.metadata.get("stopped_early", -1)
        summary["probe_drift_max"] = (
            float(np.max(probe.energy_drift())) if probe.n_steps else np.inf
        )
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    if cfg.require_stable and report.lambda_min_k <= 0:
        raise UnstableK(report.lambda_min_k)
    return summary


def _cpmd_worker(args):
    system, mdcfg, r0, v0 = args
    return run(system, mdcfg, r0, v0)


def scenario_cpmd_compare(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    v0 = init_single_phonon(cfg.n_atoms, cfg.t_ion, cfg.mass)

    ref = run(
        system,
        MdConfig(cfg.dt, cfg.n_steps, "bomd_converged", converged_policy(cfg)),
        r0,
        v0,
    )
    write_trajectory(os.path.join(out_dir, "bomd_converged.csv"), ref, cfg)
    pattern = dominant_pattern(ref, r0)
    fit_ref = hooke_fit(ref, r0, cfg.mass)
    omega_ref = mode_frequency(fit_ref, pattern)

    jobs = [
        (
            system,
            MdConfig(
                cfg.dt, cfg.n_steps, "cpmd", converged_policy(cfg), mu=float(mu)
            ),
            r0,
            v0,
        )
        for mu in cfg.mu_list
    ]
    runs = _pmap(_cpmd_worker, jobs, threads)

    rows = []
    logs = []
    for mu, traj in zip(cfg.mu_list, runs):
        write_trajectory(
            os.path.join(out_dir, f"cpmd_mu_{int(mu)}.csv"), traj, cfg, {"mu": mu}
        )
        fit = hooke_fit(traj, r0, cfg.mass)
        om = mode_frequency(fit, pattern)
        err = (om - omega_ref) / omega_ref
        ext = traj.metadata["extended_energy"]
        fluct = float((np.max(ext) - np.min(ext)) / abs(np.mean(ext)))
        rows.append([mu, om, err, fluct])
        if abs(err) > 0:
            logs.append((np.log10(mu), np.log10(abs(err))))
    _write_rows(
        os.path.join(out_dir, "cpmd_sweep.csv"),
        _meta(cfg, {"omega_ref": omega_ref}),
        ["mu", "omega_hooke", "err_omega_hooke", "ext_energy_fluct"],
        rows,
    )
    errs = {row[0]: abs(row[2]) for row in rows}
    summary = {"omega_ref": omega_ref}
    if len(logs) >= 2:
        xs, ys = zip(*logs)
        summary["slope_err_vs_mu"] = float(np.polyfit(xs, ys, 1)[0])
    else:
        summary["slope_err_vs_mu"] = np.nan
    mu_min, mu_max = min(cfg.mu_list), max(cfg.mu_list)
    summary["err_at_mu_min"] = errs.get(mu_min, np.nan)
    summary["err_at_mu_max"] = errs.get(mu_max, np.nan)
    summary["floor_ratio"] = (
        summary["err_at_mu_min"] / summary["err_at_mu_max"]
        if summary["err_at_mu_max"]
        else np.inf
    )
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def scenario_nonequilibrium(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    v0 = init_kick(cfg.n_atoms, cfg.kick_velocity)

    ref = run(
        system,
        MdConfig(cfg.dt, cfg.n_steps, "bomd_converged", converged_policy(cfg)),
        r0,
        v0,
    )
    tr = run(
        system,
        MdConfig(
            cfg.dt,
            cfg.n_steps,
            "trbomd_n",
            fixed_policy(cfg),
            omega=cfg.omega,
            record_density_dev=cfg.sample_every,
        ),
        r0,
        v0,
    )
    bn = run(
        system,
        MdConfig(
            cfg.dt,
            cfg.n_steps,
            "bomd_n",
            fixed_policy(cfg),
            record_density_dev=cfg.sample_every,
        ),
        r0,
        v0,
    )
    write_trajectory(os.path.join(out_dir, "bomd_converged.csv"), ref, cfg)
    write_trajectory(os.path.join(out_dir, "trbomd_n.csv"), tr, cfg)
    write_trajectory(os.path.join(out_dir, "bomd_n.csv"), bn, cfg)

    summary = {}
    for name, traj in (("trbomd", tr), ("bomd_n", bn)):
        for atom in range(3):
            num = np.max(np.abs(traj.positions[:, atom] - ref.positions[:, atom]))
            den = np.max(np.abs(ref.positions[:, atom]))
            summary[f"{name}_linf_atom{atom + 1}"] = float(num / den)
        if len(traj.density_dev):
            summary[f"{name}_sup_density_dev_over_n"] = float(
                np.max(traj.density_dev) / system.n_electrons
            )
    summary["crossed_over"] = bool(
        np.max(tr.positions[:, 0]) > r0[1]
    )  # first atom passes its neighbor's lattice site
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def scenario_toy(cfg, out_dir, threads=1):
    rows = []
    worst = 0.0
    cases = [(0.3, 1), (0.3, 3), (0.1, 5), (1.0, 1), (0.5, 2)]
    for alpha, k in cases:
        model = ToyModel(
            omega_cap=cfg.toy_omega_cap, alpha=alpha, k_steps=k
        )
        lin = toy_linearize(model, cfg.toy_omega)
        num = np.linalg.eigvals(lin.a_matrix)
        slow_num = num[np.argmin(np.abs(num - lin.eigenvalues[0]))]
        rel = abs(slow_num - lin.eigenvalues[0]) / abs(lin.eigenvalues[0])
        worst = max(worst, rel)
        rows.append(
            [
                alpha,
                k,
                lin.l_coeff,
                lin.k_coeff,
                lin.eigenvalues[0].real,
                lin.eigenvalues[1].real,
                rel,
            ]
        )
    _write_rows(
        os.path.join(out_dir, "eigen_check.csv"),
        _meta(cfg),
        ["alpha", "k", "l_coeff", "k_coeff", "lam_slow", "lam_fast", "rel_err"],
        rows,
    )

    model = ToyModel(
        omega_cap=cfg.toy_omega_cap, alpha=cfg.toy_alpha, k_steps=cfg.toy_k
    )
    fp = model.force_slope(model.x_star)
    pert_rows = []
    prev = None
    for j in range(5):
        om = cfg.toy_omega * 2**j
        lin = toy_linearize(model, om)
        tilde, _ = toy_perturbed_freq(lin, om, fp)
        exact = np.sqrt(-lin.eigenvalues[0].real)
        resid = abs(tilde - exact)
        ratio = prev / resid if (prev is not None and resid > 0) else np.nan
        pert_rows.append([om, tilde, exact, resid, ratio])
        prev = resid
    _write_rows(
        os.path.join(out_dir, "perturbation_order.csv"),
        _meta(cfg),
        ["omega", "omega_cap_tilde", "omega_cap_exact", "residual", "ratio_to_prev"],
        pert_rows,
    )

    traj = toy_simulate(
        model,
        cfg.toy_omega,
        cfg.toy_dt,
        cfg.toy_steps,
        ToyState(x=1.0, v=0.0, s=0.0, s_dot=0.0),
    )
    _write_rows(
        os.path.join(out_dir, "toy_trajectory.csv"),
        _meta(cfg),
        ["time", "x", "v", "s", "s_dot"],
        np.column_stack([traj.times, traj.x, traj.v, traj.s, traj.s_dot]),
    )

    summary = {"eigen_rel_err_max": worst}
    try:
        summary["anharmonic_average"] = toy_anharmonic_average(
            cfg.toy_a, cfg.toy_xi0, cfg.toy_horizon, cfg.toy_dt
        )
        summary["anharmonic_escaped_at"] = -1.0
    except Escaped as exc:
        summary["anharmonic_average"] = np.nan
        summary["anharmonic_escaped_at"] = exc.t
    finite = [r[4] for r in pert_rows if np.isfinite(r[4])]
    summary["perturbation_ratio_mean"] = float(np.mean(finite)) if finite else np.nan
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


def scenario_spectrum(cfg, out_dir, threads=1):
    system = system_from_config(cfg)
    r0 = system.equilibrium_positions()
    m_field, _ = system.fields_at(r0)
    seed = np.full(system.grid.n_points, system.n_electrons / system.grid.length)
    out = rho_scf(system, m_field, seed, converged_policy(cfg))
    sol = system.ks(m_field, out.density, n_extra=cfg.n_eigs)
    rows = [
        [i + 1, sol.eigenvalues[i], sol.occupations[i]]
        for i in range(len(sol.eigenvalues))
    ]
    _write_rows(
        os.path.join(out_dir, "eigenvalues.csv"),
        _meta(cfg),
        ["index", "eigenvalue", "occupation"],
        rows,
    )
    summary = {
        "total_energy": total_energy(system.grid, system.yukawa, sol, m_field),
        "gap": sol.gap,
        "fermi_level": sol.fermi_level,
        "scf_iterations": out.iterations,
        "scf_residual": out.residual_history[-1],
    }
    write_summary(os.path.join(out_dir, "summary.csv"), cfg, summary)
    return summary


_SCENARIO_FUNCS = {
    "drift": scenario_drift,
    "trajectory": scenario_trajectory,
    "omega_sweep": scenario_omega_sweep,
    "stability": scenario_stability,
    "cpmd_compare": scenario_cpmd_compare,
    "nonequilibrium": scenario_nonequilibrium,
    "toy": scenario_toy,
    "spectrum": scenario_spectrum,
}


def run_scenario(cfg, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    return _SCENARIO_FUNCS[cfg.scenario](cfg, out_dir, threads)
