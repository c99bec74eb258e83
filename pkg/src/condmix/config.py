"""Target presets and ``key = value`` config files for the command line."""

import numpy as np

from .potentials import GaussianMixtureTarget, PowerPosteriorTarget


class ConfigError(ValueError):
    """Bad or inconsistent configuration; the CLI exits with status 2."""


PRESETS = {
    "nu1": dict(weights=[0.9, 0.1], means=[[-10.0], [10.0]], covariance=1.0),
    "nu2": dict(
        weights=[0.15, 0.15, 0.3, 0.2, 0.2],
        means=[[-5.0], [-2.5], [0.0], [2.5], [5.0]],
        covariance=1.0,
    ),
    "nu3": dict(
        weights=[0.4, 0.4, 0.1, 0.1],
        means=[[-5.0, -5.0], [5.0, 5.0], [-5.0, 5.0], [5.0, -5.0]],
        covariance=np.eye(2),
    ),
}

# run length T used for each preset in the reference experiments
PRESET_ITERATIONS = {"nu1": 500, "nu2": 5000, "nu3": 500}


def preset_target(name):
    try:
        spec = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return GaussianMixtureTarget(spec["weights"], spec["means"], spec["covariance"])


def default_init(target):
    """Uniform box covering every mode with margin: [-15, 15] in 1D, [-10, 10]^2 in 2D."""
    return "uniform:-15,15" if target.dimension == 1 else "uniform:-10,10"


def default_grid(target):
    if target.dimension == 1:
        return "-15,15,300"
    return "-10,10,80;-10,10,80"


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[float(v) for v in r.replace(",", " ").split()] for r in rows])


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Repeated keys accumulate."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.lower().replace("-", "_")
            if key == "region":
                out.setdefault("region", []).append(val)
            else:
                out[key] = val
    return out


def target_from_config(cfg):
    """Build a mixture (``weights``/``means``/``covariance``) or power posterior (``data_file``)."""
    try:
        if "preset" in cfg:
            return preset_target(cfg["preset"])
        if "data_file" in cfg:
            data = np.loadtxt(cfg["data_file"], delimiter=",", ndmin=2)
            norm = float(cfg["theta0_norm"]) if "theta0_norm" in cfg else None
            return PowerPosteriorTarget(data, float(cfg.get("beta", 1.0)), norm)
        if "weights" in cfg and "means" in cfg:
            weights = [float(w) for w in cfg["weights"].replace(",", " ").split()]
            means = _matrix(cfg["means"])
            cov = cfg.get("covariance", "1")
            cov = float(cov) if ";" not in cov and len(cov.replace(",", " ").split()) == 1 else _matrix(cov)
            return GaussianMixtureTarget(weights, means, cov)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"invalid target: {exc}") from None
    raise ConfigError("config names no target (preset, weights/means, or data_file)")
