"""Flat key = value experiment configs with preset-aware defaults.

One assignment per line, '#' starts a comment, unknown keys are errors.
The `preset` key (insulator or metal) fills in the smearing width, grid
resolution, occupation ramp, and mixing defaults before the file's own
assignments are applied, so an empty file is a complete insulator setup.
"""

from dataclasses import dataclass, field

from .errors import ConfigError

# defaults shared by both presets
_COMMON = {
    "scenario": "drift",
    "preset": "insulator",
    "out_dir": "",
    "kappa": 0.01,
    "eps0": 10.0,
    "n_atoms": 32,
    "spacing": 10.0,
    "charge": 1.0,
    "mass": 42000.0,
    "t_ion": 10.0,
    "scheme": "trbomd_n",
    "n_scf": 5,
    "dt": 250.0,
    "omega": 4e-3,
    "n_steps": 10000,
    "ref_steps": 0,
    "scf_scheme": "kerker",
    "scf_alpha": 0.3,
    "scf_tol": 1e-8,
    "scf_max_iter": 1000,
    "ref_scf_tol": 1e-8,
    "ref_scf_max_iter": 1000,
    "omega2_list": [2.5e-3, 2.5e-4, 2.5e-5, 2.5e-6, 2.5e-7, 2.5e-8, 2.5e-9],
    "mu_list": [2500.0, 5000.0, 10000.0, 20000.0],
    "mu": 10000.0,
    "kick_velocity": 8e-4,
    "sample_every": 5,
    "probe_steps": 0,
    "require_stable": False,
    "h_r": 1e-3,
    "h_rho": 0.0,
    "n_eigs": 8,
    "toy_omega_cap": 1.0,
    "toy_alpha": 0.3,
    "toy_k": 1,
    "toy_omega": 20.0,
    "toy_dt": 0.01,
    "toy_steps": 20000,
    "toy_a": 0.05,
    "toy_xi0": 0.5,
    "toy_horizon": 2000.0,
    "threads": 1,
}

# preset-specific defaults; a file key always wins over these
_PRESETS = {
    "insulator": {
        "sigma": 2.0,
        "points_per_atom": 15,
        "occ_width": 0.0,
        "scf_q0": 0.5,
        "ref_scf_scheme": "simple",
        "ref_scf_alpha": 0.06,
        "ref_scf_q0": 0.5,
    },
    "metal": {
        "sigma": 6.0,
        "points_per_atom": 8,
        "occ_width": 1e-3,
        "scf_q0": 1.0,
        "ref_scf_scheme": "kerker",
        "ref_scf_alpha": 0.3,
        "ref_scf_q0": 1.0,
    },
}

_SCENARIOS = (
    "drift",
    "trajectory",
    "omega_sweep",
    "stability",
    "cpmd_compare",
    "nonequilibrium",
    "toy",
    "spectrum",
)

_POSITIVE = (
    "kappa",
    "eps0",
    "n_atoms",
    "spacing",
    "charge",
    "sigma",
    "mass",
    "points_per_atom",
    "n_scf",
    "dt",
    "omega",
    "n_steps",
    "scf_alpha",
    "scf_tol",
    "scf_max_iter",
    "ref_scf_alpha",
    "ref_scf_tol",
    "ref_scf_max_iter",
    "mu",
    "sample_every",
    "h_r",
    "n_eigs",
    "toy_omega_cap",
    "toy_alpha",
    "toy_k",
    "toy_omega",
    "toy_dt",
    "toy_steps",
    "toy_horizon",
    "threads",
)


@dataclass
class ExperimentConfig:
    """Effective configuration: every key resolved, ready to echo."""

    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def echo_lines(self):
        return [f"{k} = {_format(v)}" for k, v in sorted(self.values.items())]


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(f"{v:g}" for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _parse_value(key, text, template, line_no):
    if isinstance(template, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"expected a boolean, got '{text}'", line_no, key)
    if isinstance(template, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got '{text}'", line_no, key)
    if isinstance(template, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got '{text}'", line_no, key)
    if isinstance(template, list):
        try:
            return [float(tok) for tok in text.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"expected a comma list of numbers", line_no, key)
    return text


def parse_config(text):
    """Raw key -> (value-string, line number) mapping with syntax checks."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", line_no)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", line_no)
        if key in out:
            raise ConfigError("duplicate key", line_no, key)
        out[key] = (value, line_no)
    return out


def resolve_config(raw):
    """Apply preset and common defaults, type-check, validate ranges."""
    preset_name = raw.get("preset", ("insulator", 0))[0]
    if preset_name not in _PRESETS:
        line = raw.get("preset", (None, None))[1]
        raise ConfigError(
            f"unknown preset '{preset_name}' (have: {', '.join(_PRESETS)})",
            line,
            "preset",
        )
    values = dict(_COMMON)
    values.update(_PRESETS[preset_name])
    values["preset"] = preset_name
    for key, (text, line_no) in raw.items():
        if key not in values:
            raise ConfigError("unknown key", line_no, key)
        values[key] = _parse_value(key, text, values[key], line_no)

    if values["scenario"] not in _SCENARIOS:
        raise ConfigError(
            f"unknown scenario '{values['scenario']}' "
            f"(have: {', '.join(_SCENARIOS)})",
            None,
            "scenario",
        )
    for key in _POSITIVE:
        val = values[key]
        if not val > 0:
            raise ConfigError(f"must be positive, got {_format(val)}", None, key)
    if values["occ_width"] < 0:
        raise ConfigError("must be >= 0", None, "occ_width")
    if values["n_atoms"] % 2 != 0:
        raise ConfigError(
            "alternating-velocity launches need an even atom count",
            None,
            "n_atoms",
        )
    for key in ("omega2_list", "mu_list"):
        if any(v <= 0 for v in values[key]):
            raise ConfigError("entries must be positive", None, key)
    return ExperimentConfig(values=values)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return resolve_config(parse_config(text))
