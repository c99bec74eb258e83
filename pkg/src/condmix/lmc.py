"""Unadjusted Langevin Monte Carlo over particle ensembles.

Noise is counter-based: the Gaussian block used at step ``k`` comes from a
Philox generator keyed on ``(seed, k)``, and row ``i`` of the block drives
particle ``i``. A run is therefore reproducible bit for bit, and any step can
be regenerated without replaying the ones before it.
"""

from dataclasses import dataclass, field
import csv
import math
import warnings

import numpy as np

_KEY_SPAN = 1 << 64
_INIT_STEP = _KEY_SPAN - 1


class LmcDivergenceError(FloatingPointError):
    """A particle left the finite reals."""

    def __init__(self, step, particle):
        self.step = step
        self.particle = particle
        super().__init__(f"LMC diverged at step {step} (particle {particle})")


def _philox(seed, counter):
    key = (int(seed) % _KEY_SPAN) * _KEY_SPAN + int(counter)
    return np.random.Generator(np.random.Philox(key=key))


def step_noise(seed, step, n_particles, dimension):
    """The standard normal block consumed at ``step``."""
    return _philox(seed, step).standard_normal((n_particles, dimension))


def chain_rng(seed, chain):
    """Independent stream for restart chain ``chain``."""
    key = np.random.SeedSequence([int(seed) % _KEY_SPAN, 1, int(chain)]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Initial samplers
# ---------------------------------------------------------------------------


class InitSampler:
    """Draws i.i.d. starting points.

    kind is ``uniform`` (params lo, hi), ``gauss`` (params sigma) or
    ``point`` (params the coordinates).
    """

    def __init__(self, kind, params):
        if kind not in ("uniform", "gauss", "point"):
            raise ValueError(f"unknown initial sampler {kind!r}")
        self.kind = kind
        self.params = tuple(float(p) for p in params)
        if kind == "uniform" and (len(self.params) != 2 or self.params[0] >= self.params[1]):
            raise ValueError("uniform init needs lo < hi")
        if kind == "gauss" and (len(self.params) != 1 or self.params[0] <= 0):
            raise ValueError("gauss init needs one positive sigma")

    @classmethod
    def parse(cls, spec):
        """``uniform:lo,hi`` | ``gauss:sigma`` | ``point:x1,...``."""
        kind, _, rest = spec.strip().partition(":")
        params = [p for p in rest.split(",") if p.strip()]
        return cls(kind.strip().lower(), params)

    def sample(self, n, dimension, rng):
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * rng.random((n, dimension))
        if self.kind == "gauss":
            return self.params[0] * rng.standard_normal((n, dimension))
        pt = np.asarray(self.params)
        if pt.size == 1:
            pt = np.full(dimension, pt[0])
        if pt.size != dimension:
            raise ValueError("point init has the wrong dimension")
        return np.tile(pt, (n, 1))

    def __str__(self):
        return f"{self.kind}:" + ",".join(f"{p:g}" for p in self.params)


# ---------------------------------------------------------------------------
# Configuration and containers
# ---------------------------------------------------------------------------


def step_size_preset(name, iterations, dimension=1, c=1.0):
    """Schedules for h: ``lsi`` gives 1/sqrt(T); ``pi`` gives c T^(-2/3) d^(-2/3)."""
    if name == "lsi":
        return 1.0 / math.sqrt(iterations)
    if name == "pi":
        return c * iterations ** (-2.0 / 3.0) * dimension ** (-2.0 / 3.0)
    raise ValueError(f"unknown step-size preset {name!r}")


@dataclass
class LmcConfig:
    step_size: float
    iterations: int
    n_particles: int = 1
    rng_seed: int = 0
    record_every: int = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.iterations < 0 or self.n_particles < 1:
            raise ValueError("iterations must be >= 0 and n_particles >= 1")
        if self.record_every is None:
            self.record_every = max(1, self.iterations // 1000)
        if self.record_every < 1:
            raise ValueError("record_every must be positive")

    def check_step(self, potential):
        L = getattr(potential, "lipschitz_hint", None)
        if L is not None and self.step_size >= 1.0 / (6.0 * L):
            warnings.warn(
                f"step size {self.step_size:g} >= 1/(6L) = {1.0 / (6.0 * L):g}",
                RuntimeWarning,
                stacklevel=3,
            )


@dataclass
class Ensemble:
    positions: np.ndarray
    time_index: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.positions)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(self.positions), axis=1))[0])
            raise LmcDivergenceError(self.time_index, bad)

    @property
    def n_particles(self):
        return self.positions.shape[0]


@dataclass
class TrajectoryAverage:
    pooled_positions: np.ndarray
    horizon: float
    n_recorded: int = field(default=1)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def lmc_step(x, potential, h, noise):
    """One Euler-Maruyama step x - h grad V(x) + sqrt(2h) noise.

    Works on a point ``(d,)`` or a batch ``(n, d)``.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = x - h * potential.grad(x) + math.sqrt(2.0 * h) * np.asarray(noise)
    finite = np.isfinite(out)
    if not finite.all():
        particle = 0 if out.ndim == 1 else int(np.flatnonzero(~finite.all(axis=1))[0])
        raise LmcDivergenceError(-1, particle)
    return out


def iter_lmc(config, potential, init, noise=True):
    """Yield the recorded ensembles of an LMC run one at a time.

    Step 0 and every ``record_every``-th step are recorded; the final step
    is always recorded.
    """
    config.check_step(potential)
    d = potential.dimension
    n = config.n_particles
    h = config.step_size
    scale = math.sqrt(2.0 * h)
    x = init.sample(n, d, _philox(config.rng_seed, _INIT_STEP))
    yield Ensemble(x.copy(), 0)
    for k in range(config.iterations):
        drift = x - h * potential.grad(x)
        if noise:
            x = drift + scale * step_noise(config.rng_seed, k, n, d)
        else:
            x = drift
        t = k + 1
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise LmcDivergenceError(t, bad)
        if t % config.record_every == 0 or t == config.iterations:
            yield Ensemble(x.copy(), t)


def run_lmc(config, potential, init, noise=True):
    """Run LMC and return the list of recorded ensembles."""
    return list(iter_lmc(config, potential, init, noise=noise))


def averaged_measure(trajectory, step_size=1.0):
    """Pool every recorded ensemble with equal weight."""
    trajectory = list(trajectory)
    if not trajectory:
        raise ValueError("empty trajectory")
    pooled = np.concatenate([e.positions for e in trajectory], axis=0)
    horizon = trajectory[-1].time_index * step_size
    return TrajectoryAverage(pooled, horizon, len(trajectory))


@dataclass
class RestartResult:
    positions: np.ndarray
    diverged: int


def restart_run(config, potential, n_restarts, init, noise=True):
    """Run independent single-particle chains and keep their endpoints.

    Chain ``c`` draws its start and all its noise from its own stream, so the
    endpoints do not depend on how many other chains run alongside it.
    Chains that diverge are dropped and counted.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    config.check_step(potential)
    d = potential.dimension
    T = config.iterations
    h = config.step_size
    scale = math.sqrt(2.0 * h)
    x = np.empty((n_restarts, d))
    xi = np.zeros((n_restarts, T, d))
    for c in range(n_restarts):
        rng = chain_rng(config.rng_seed, c)
        x[c] = init.sample(1, d, rng)[0]
        if noise:
            xi[c] = rng.standard_normal((T, d))
    alive = np.ones(n_restarts, dtype=bool)
    for k in range(T):
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        xl = x[live]
        xl = xl - h * potential.grad(xl) + scale * xi[live, k]
        x[live] = xl
        bad = ~np.isfinite(xl).all(axis=1)
        if bad.any():
            alive[live[bad]] = False
    diverged = int((~alive).sum())
    if diverged:
        warnings.warn(f"{diverged} of {n_restarts} restart chains diverged", RuntimeWarning, stacklevel=2)
    return RestartResult(x[alive], diverged)


# ---------------------------------------------------------------------------
# Exponential moment bound under strong dissipativity
# ---------------------------------------------------------------------------


def moment_bound(m, b, dimension):
    """32 exp((8b + 64d) / (4m)), the stationary bound on E exp(||x||^2 / (4m))."""
    return 32.0 * math.exp((8.0 * b + 64.0 * dimension) / (4.0 * m))


def moment_step_cap(L, m, b, dimension):
    """Return (strict cap 1/(16L), inclusive cap 8m/(4b + 32d))."""
    return 1.0 / (16.0 * L), 8.0 * m / (4.0 * b + 32.0 * dimension)


def moment_step_admissible(h, L, m, b, dimension):
    strict, inclusive = moment_step_cap(L, m, b, dimension)
    return h < strict and h <= inclusive


def write_trajectory_csv(path, trajectory):
    """Dump ensembles as rows ``t,particle,x1,...,xd``."""
    trajectory = list(trajectory)
    d = trajectory[0].positions.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "particle"] + [f"x{j + 1}" for j in range(d)])
        for e in trajectory:
            for i, row in enumerate(e.positions):
                w.writerow([e.time_index, i] + [repr(float(v)) for v in row])
