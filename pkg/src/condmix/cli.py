"""Command-line harness: mixture experiments and brute-force verification suites.

Every command prints one line per check, writes ``report.json`` (and any
CSV artefacts) to ``--out``, and exits 0 when all checks pass, 1 when any
fails, and 2 on a configuration error.
"""

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from . import hypercube as hc
from ._accel import backend_name
from .config import (
    ConfigError,
    PRESET_ITERATIONS,
    default_grid,
    default_init,
    preset_target,
    read_config,
    target_from_config,
)
from .divergences import (
    Grid,
    GridDensity,
    UndefinedConditionalError,
    chi2_variance,
    dichotomy_check_lsi,
    dichotomy_check_pi,
    fisher_information_grid,
    kl_divergence,
    pfi_edge_form,
    pfi_grid,
    poincare_constant_grid,
    target_conditional_density,
    tv_distance,
)
from .lmc import (
    InitSampler,
    LmcConfig,
    LmcDivergenceError,
    iter_lmc,
    moment_bound,
    moment_step_admissible,
    moment_step_cap,
    restart_run,
    step_size_preset,
)
from .potentials import GaussianMixtureTarget, QuadraticPotential
from .regions import VoronoiPartition, interval, parse_region_spec, whole_space

EPS = 1e-12


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class Report:
    """Collects named checks; serialises to the JSON report schema."""

    def __init__(self, command, seed, params):
        self.command = command
        self.seed = seed
        self.params = dict(params)
        self.checks = []
        self.artifacts = []
        self.results = {}
        self.started = time.perf_counter()

    def check(self, name, value, bound, passed):
        self.checks.append({"name": name, "value": _jsonable(value), "bound": _jsonable(bound), "pass": bool(passed)})
        return bool(passed)

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks)

    def as_dict(self):
        return {
            "command": self.command,
            "seed": self.seed,
            "params": {k: _jsonable(v) for k, v in self.params.items()},
            "checks": self.checks,
            "artifacts": self.artifacts,
            "results": _jsonable(self.results),
            "backend": backend_name(),
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
        }

    def write(self, out_dir):
        path = os.path.join(out_dir, "report.json")
        self.artifacts.append(path)
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")
        return path

    def print_summary(self, stream=None):
        stream = sys.stdout if stream is None else stream
        for c in self.checks:
            tag = "PASS" if c["pass"] else "FAIL"
            print(f"[{tag}] {c['name']}: value={c['value']} bound={c['bound']}", file=stream)
        print(f"{self.command}: {'all checks passed' if self.passed else 'FAILED'}", file=stream)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def _fmt(x):
    return repr(float(x))


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Histogram bookkeeping shared by the LMC experiments
# ---------------------------------------------------------------------------


class PartitionHistogram:
    """Bins an ensemble once and yields the global and per-region densities.

    Matches :func:`empirical_conditional_density`: a region's histogram keeps
    only cells whose centre lies in the region, adds ``eps`` to those cells,
    and renormalises.
    """

    def __init__(self, grid, regions, eps=EPS):
        self.grid = grid
        self.regions = list(regions)
        self.eps = eps
        pts = grid.points()
        self.cell_masks = [r.contains(pts) for r in self.regions]
        self.n_cells = pts.shape[0]
        self.counts = np.zeros((len(self.regions), self.n_cells))
        self.global_counts = np.zeros(self.n_cells)
        self.region_totals = np.zeros(len(self.regions))
        self.n_total = 0

    def _cell_index(self, x):
        idx = np.zeros(x.shape[0], dtype=np.int64)
        ok = np.ones(x.shape[0], dtype=bool)
        for axis, ((lo, hi), b) in enumerate(zip(self.grid.bounds, self.grid.bins)):
            k = np.floor((x[:, axis] - lo) / (hi - lo) * b).astype(np.int64)
            k[x[:, axis] == hi] = b - 1
            ok &= (k >= 0) & (k < b)
            idx = idx * b + np.clip(k, 0, b - 1)
        return idx, ok

    def add(self, positions, region_index):
        """Accumulate an ensemble; ``region_index[i]`` names the region of particle i (-1 for none)."""
        x = np.asarray(positions, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        region_index = np.asarray(region_index, dtype=np.int64)
        cell, ok = self._cell_index(x)
        R = len(self.regions)
        tagged = region_index >= 0
        self.region_totals += np.bincount(region_index[tagged], minlength=R)
        sel = ok & tagged
        key = region_index[sel] * self.n_cells + cell[sel]
        self.counts += np.bincount(key, minlength=R * self.n_cells).reshape(R, self.n_cells)
        self.global_counts += np.bincount(cell[ok], minlength=self.n_cells)
        self.n_total += x.shape[0]

    def reset(self):
        self.counts[:] = 0.0
        self.global_counts[:] = 0.0
        self.region_totals[:] = 0.0
        self.n_total = 0

    def mass(self, r):
        return self.region_totals[r] / self.n_total

    def global_density(self):
        vals = self.global_counts / (self.n_total * self.grid.cell_volume) + self.eps
        return GridDensity(self.grid, vals.reshape(self.grid.shape), False).normalize()

    def conditional_density(self, r):
        n_in = self.region_totals[r]
        if n_in == 0:
            raise UndefinedConditionalError(f"no samples in {self.regions[r].label}")
        vals = np.where(self.cell_masks[r], self.counts[r] / (n_in * self.grid.cell_volume) + self.eps, 0.0)
        return GridDensity(self.grid, vals.reshape(self.grid.shape), False).normalize()


def _target_densities(potential, regions, grid):
    glob = target_conditional_density(potential, whole_space(), grid)
    conds = [target_conditional_density(potential, r, grid) for r in regions]
    masses = [float(glob.values.ravel()[r.contains(grid.points())].sum() * grid.cell_volume) for r in regions]
    return glob, conds, masses


def _region_labeller(potential, regions):
    if isinstance(potential, GaussianMixtureTarget) and all(r.label.startswith("voronoi:") for r in regions):
        part = VoronoiPartition(potential)
        order = [int(r.label.split(":")[1]) for r in regions]
        lut = np.full(part.target.n_components, -1)
        lut[order] = np.arange(len(order))
        return lambda x: lut[part.index(x)]

    def label(x):
        out = np.full(x.shape[0], -1)
        for k, r in enumerate(regions):
            out[(out < 0) & r.contains(x)] = k
        return out

    return label


def _resolve_regions(specs, potential):
    if specs:
        return [parse_region_spec(s, potential if isinstance(potential, GaussianMixtureTarget) else None,
                                  potential.dimension) for s in specs]
    if isinstance(potential, GaussianMixtureTarget):
        return list(VoronoiPartition(potential).cells)
    return [interval(hi=0.0, label="x<0"), interval(lo=0.0, label="x>=0")]


# ---------------------------------------------------------------------------
# experiment-gmm
# ---------------------------------------------------------------------------

TRACE_HEADER = ["t", "global_kl", "global_tv", "region", "mass", "cond_kl", "cond_tv", "cond_chi2", "fi", "pfi"]

# expected end-of-run signatures per preset, as (quantity, comparison, threshold)
PRESET_EXPECT = {
    "nu1": [("global_kl", ">", 0.1), ("cond_kl_each", "<", 0.05)],
    "nu2": [("global_kl", "<", 0.05)],
    "nu3": [("cond_kl_each", "<", 0.05)],
}


def experiment_gmm(target, h, T, n_particles, seed, init, grid, out_dir, record_every=None,
                   preset=None, regions=None):
    """Run LMC on a mixture and trace global and per-Voronoi-cell divergences.

    Writes ``trace.csv`` (one row per checkpoint and region), ``histogram.csv``
    (final empirical and target densities), ``config.echo`` and
    ``report.json`` into ``out_dir``.
    """
    _mkdir(out_dir)
    grid = grid if isinstance(grid, Grid) else Grid.parse(grid)
    init = init if isinstance(init, InitSampler) else InitSampler.parse(init)
    regions = regions or list(VoronoiPartition(target).cells)
    cfg = LmcConfig(h, T, n_particles, seed, record_every)
    params = dict(preset=preset, h=h, T=T, particles=n_particles, init=str(init), grid=grid.spec(),
                  record_every=cfg.record_every, regions=[r.label for r in regions],
                  estimator="histogram reconstruction, eps=%g per cell" % EPS)
    rep = Report("experiment-gmm", seed, params)
    _write_echo(out_dir, params, seed)

    pi_glob, pi_cond, pi_mass = _target_densities(target, regions, grid)
    pi_glob_pos = GridDensity(grid, pi_glob.values + EPS, False).normalize()
    labeller = _region_labeller(target, regions)
    hist = PartitionHistogram(grid, regions)
    final = {}
    trace_path = os.path.join(out_dir, "trace.csv")
    rep.artifacts.append(trace_path)
    error = None
    with open(trace_path, "w", newline="") as fh, warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        try:
            for ens in iter_lmc(cfg, target, init):
                hist.reset()
                hist.add(ens.positions, labeller(ens.positions))
                mu = hist.global_density()
                gkl, gtv = kl_divergence(mu, pi_glob), tv_distance(mu, pi_glob)
                fi, pfi = fisher_information_grid(mu, pi_glob_pos), pfi_grid(mu, pi_glob_pos)
                rows = []
                for k, r in enumerate(regions):
                    mass = hist.mass(k)
                    try:
                        mc = hist.conditional_density(k)
                        ckl, ctv, cchi = kl_divergence(mc, pi_cond[k]), tv_distance(mc, pi_cond[k]), chi2_variance(mc, pi_cond[k])
                    except UndefinedConditionalError:
                        ckl = ctv = cchi = float("nan")
                    rows.append((r.label, mass, ckl, ctv, cchi))
                    w.writerow([ens.time_index, _fmt(gkl), _fmt(gtv), r.label, _fmt(mass),
                                _fmt(ckl), _fmt(ctv), _fmt(cchi), _fmt(fi), _fmt(pfi)])
                fh.flush()
                final = dict(t=ens.time_index, global_kl=gkl, global_tv=gtv, fi=fi, pfi=pfi,
                             regions={lab: dict(mass=m, target_mass=pm, cond_kl=a, cond_tv=b, cond_chi2=c)
                                      for (lab, m, a, b, c), pm in zip(rows, pi_mass)})
                last_mu = mu
        except LmcDivergenceError as exc:
            error = str(exc)
        rep.results["warnings"] = sorted({str(c.message) for c in caught})

    if error is not None:
        rep.results["error"] = error
        rep.check("lmc_finite", error, None, False)
        rep.write(out_dir)
        return rep

    hist_path = os.path.join(out_dir, "histogram.csv")
    _write_histogram(hist_path, grid, last_mu, pi_glob)
    rep.artifacts.append(hist_path)
    rep.results["final"] = final
    rep.check("lmc_finite", True, None, True)
    for quantity, op, thr in PRESET_EXPECT.get(preset, []):
        if quantity == "global_kl":
            val = final["global_kl"]
            rep.check(f"final global KL {op} {thr}", val, thr, val > thr if op == ">" else val < thr)
        else:
            for lab, rr in final["regions"].items():
                val = rr["cond_kl"]
                ok = math.isfinite(val) and val < thr
                rep.check(f"final conditional KL on {lab} < {thr}", val, thr, ok)
    rep.write(out_dir)
    return rep


def _write_echo(out_dir, params, seed):
    with open(os.path.join(out_dir, "config.echo"), "w") as fh:
        fh.write(f"seed = {seed}\n")
        for k, v in params.items():
            fh.write(f"{k} = {v}\n")


def _write_histogram(path, grid, mu, pi):
    pts = grid.points()
    cols = ["x"] if grid.dimension == 1 else ["x1", "x2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["empirical", "target"])
        for p, m, q in zip(pts, mu.values.ravel(), pi.values.ravel()):
            w.writerow([_fmt(c) for c in p] + [_fmt(m), _fmt(q)])


# ---------------------------------------------------------------------------
# experiment-restart
# ---------------------------------------------------------------------------


def experiment_restart(target, h, T, counts, repeats, seed, init, out_dir, min_fraction=0.02):
    """Terminal Voronoi occupancy of independent single-particle chains.

    For each chain count ``n`` the experiment runs ``repeats`` times with seeds
    ``seed, seed + 1, ...`` and writes ``occupancy.csv`` with one row per
    (n, repeat, cell).
    """
    _mkdir(out_dir)
    init = init if isinstance(init, InitSampler) else InitSampler.parse(init)
    params = dict(h=h, T=T, counts=list(counts), repeats=repeats, init=str(init), min_fraction=min_fraction)
    rep = Report("experiment-restart", seed, params)
    _write_echo(out_dir, params, seed)
    part = VoronoiPartition(target)
    K = len(part)
    path = os.path.join(out_dir, "occupancy.csv")
    rep.artifacts.append(path)
    occupancy = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "repeat", "seed", "cell", "count", "fraction"])
        for n in counts:
            runs = []
            for r in range(repeats):
                s = seed + r
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = restart_run(LmcConfig(h, T, 1, s), target, n, init)
                cnt = np.bincount(part.index(res.positions), minlength=K) if len(res.positions) else np.zeros(K, int)
                frac = cnt / max(1, cnt.sum())
                for c in range(K):
                    w.writerow([n, r, s, c, int(cnt[c]), _fmt(frac[c])])
                runs.append(dict(seed=s, counts=cnt.tolist(), diverged=res.diverged))
            occupancy[n] = runs
    rep.results["occupancy"] = occupancy
    for n in counts:
        runs = occupancy[n]
        if n == 1:
            cells = [int(np.argmax(r["counts"])) for r in runs]
            one = all(sum(1 for c in r["counts"] if c > 0) == 1 for r in runs)
            rep.check("n=1: every run ends in exactly one cell", one, None, one)
            rep.results["n1_cells"] = cells
        elif n == max(counts):
            fr = min(min(r["counts"]) / max(1, sum(r["counts"])) for r in runs)
            rep.check(f"n={n}: every cell holds >= {min_fraction:g} of endpoints", fr, min_fraction, fr >= min_fraction)
    rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# verify-hypercube
# ---------------------------------------------------------------------------


def random_theorem51_instance(d, rng, max_energy=6):
    """Random integer energy, a partition into subcubes, and a starting law."""
    f = hc.EnergyFunction(d, rng.integers(0, max_energy + 1, 1 << d).astype(float))
    k = int(rng.integers(1, 3))
    bits = tuple(sorted(rng.choice(d, size=k, replace=False).tolist()))
    partition = hc.bit_partition(d, bits)
    kind = int(rng.integers(3))
    if kind == 0:
        mu0 = rng.dirichlet(np.ones(1 << d))
    elif kind == 1:
        mu0 = np.zeros(1 << d)
        mu0[rng.integers(1 << d)] = 1.0
    else:
        mu0 = rng.dirichlet(np.full(1 << d, 0.1))
        mu0 = mu0 / mu0.sum()
    return f, partition, mu0


def verify_hypercube(d, instances, seed, T=256, out_dir=None, cheeger_max_states=10):
    """Exact sweep of kernel validity and both hypercube theorems."""
    if not 2 <= d <= 10:
        raise ConfigError("verify-hypercube needs 2 <= d <= 10")
    params = dict(d=d, instances=instances, T=T, cheeger_max_states=cheeger_max_states)
    rep = Report("verify-hypercube", seed, params)
    case_dir = os.path.join(out_dir, "cases") if out_dir else None
    tol = 1e-12
    worst = dict(rowsum=0.0, lazy=0.0, balance=0.0)
    n_ratio_bad = n_plain_bad = n_weighted_bad = n_headline_bad = n_tele_bad = 0
    n52_bad = 0
    min52 = math.inf
    cheeger_bad = cheeger_n = 0
    worst_ratio = math.inf

    def sandwich(chain):
        nonlocal cheeger_bad, cheeger_n
        if 2 <= chain.n <= cheeger_max_states:
            cheeger_n += 1
            g, phi = hc.spectral_gap(chain), hc.conductance(chain)
            if not (phi**2 / 2 - 1e-9 <= g <= 2 * phi + 1e-9):
                cheeger_bad += 1

    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        f, partition, mu0 = random_theorem51_instance(d, rng)
        chain = hc.build_lazy_gibbs(f)
        for ch in [chain] + [hc.condition_kernel(chain, S) for S in partition]:
            rows, lazy, bal = hc.kernel_violations(ch)
            worst["rowsum"] = max(worst["rowsum"], rows)
            worst["lazy"] = max(worst["lazy"], lazy)
            worst["balance"] = max(worst["balance"], bal)
            sandwich(ch)
        r51 = hc.theorem51_check(chain, partition, mu0, T)
        n_tele_bad += r51.telescoping_slack < -1e-9
        for s in r51.subsets:
            scale = max(1.0, abs(s.rhs_ratio))
            worst_ratio = min(worst_ratio, s.ratio_slack / scale)
            n_ratio_bad += s.ratio_slack < -1e-9 * scale
            n_plain_bad += not (s.small_mass_all_t or s.plain_slack >= -1e-9 * scale)
            n_weighted_bad += s.weighted_slack < -1e-9 * max(1.0, s.rhs_weighted)
            n_headline_bad += not (s.small_mass_some_t or s.lhs_plain <= s.rhs_headline + 1e-9)

        g, S = hc.random_quasiconvex_instance(d, rng)
        try:
            r52 = hc.theorem52_check(g, S, case_dir)
            min52 = min(min52, r52.ratio)
        except hc.BoundViolation:
            n52_bad += 1
        sandwich(hc.condition_kernel(hc.build_lazy_gibbs(g), S))

    lin = hc.linear_energy(d, np.ones(d))
    r_lin = hc.theorem52_check(lin, hc.Subset.full(d), case_dir)

    rep.check("row sums = 1", worst["rowsum"], tol, worst["rowsum"] <= tol)
    rep.check("laziness p(x,x) >= 1/2", worst["lazy"], tol, worst["lazy"] <= tol)
    rep.check("detailed balance", worst["balance"], tol, worst["balance"] <= tol)
    rep.check("chi2 telescoping violations", int(n_tele_bad), 0, n_tele_bad == 0)
    rep.check("conditional chi2, mass-weighted form violations", int(n_weighted_bad), 0, n_weighted_bad == 0)
    rep.check("conditional chi2, plain form or small mass for all t: violations", int(n_plain_bad), 0, n_plain_bad == 0)
    rep.check("conditional chi2, 1/(alpha sqrt T) form or small mass for some t: violations", int(n_headline_bad), 0, n_headline_bad == 0)
    rep.check("conditional chi2, ratio form Var/mu(X)^2 violations",
              int(n_ratio_bad), 0, n_ratio_bad == 0)
    rep.check("quasi-convex gap bound violations on random instances", int(n52_bad), 0, n52_bad == 0)
    rep.check(f"linear f on full cube (gap vs 1/(16 d^2 D^2), D={r_lin.radius})", r_lin.gap, r_lin.bound, r_lin.passed)
    rep.check(f"cheeger sandwich violations ({cheeger_n} chains)", int(cheeger_bad), 0, cheeger_bad == 0)
    rep.results.update(worst_ratio_relative_slack=worst_ratio, min_gap_bound_ratio=min52, cheeger_chains=cheeger_n)

    if d >= 4:
        tw = hc.build_lazy_gibbs(hc.two_well_energy(d, 10.0))
        g_glob = hc.spectral_gap(tw)
        g_cond = min(hc.spectral_gap(hc.condition_kernel(tw, S)) for S in hc.bit_partition(d))
        rep.check("two-well global gap < 1e-3", g_glob, 1e-3, g_glob < 1e-3)
        rep.check("two-well conditioned gaps > 1e-2", g_cond, 1e-2, g_cond > 1e-2)
    if out_dir:
        _mkdir(out_dir)
        rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# verify-moment-bound
# ---------------------------------------------------------------------------


def verify_moment_bound(dims, h, T, n_particles, seed, m=1.0, b=0.0, L=1.0, out_dir=None):
    """Stationary E exp(||x||^2 / (4m)) under LMC for V = ||x||^2 / 2 against the moment bound."""
    for d in dims:
        if not moment_step_admissible(h, L, m, b, d):
            strict, incl = moment_step_cap(L, m, b, d)
            raise ConfigError(f"h={h:g} is inadmissible for d={d}: need h < {strict:g} and h <= {incl:g}")
    params = dict(dims=list(dims), h=h, T=T, particles=n_particles, m=m, b=b, L=L)
    rep = Report("verify-moment-bound", seed, params)
    rows = []
    for d in dims:
        cfg = LmcConfig(h, T, n_particles, seed + d, record_every=T)
        last = None
        for ens in iter_lmc(cfg, QuadraticPotential(d), InitSampler("gauss", [1.0])):
            last = ens
        vals = np.exp(np.sum(last.positions**2, axis=1) / (4.0 * m))
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
        bound = moment_bound(m, b, d)
        rows.append([d, _fmt(est), _fmt(se), _fmt(bound)])
        rep.check(f"d={d}: mean + 3 SE <= 32 exp((8b + 64d)/(4m))", est + 3 * se, bound, est + 3 * se <= bound)
        rep.results[f"d{d}"] = dict(estimate=est, se=se, bound=bound, log_slack=math.log(bound) - math.log(est + 3 * se))
    if out_dir:
        _mkdir(out_dir)
        path = os.path.join(out_dir, "moments.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d", "estimate", "se", "bound"])
            w.writerows(rows)
        rep.artifacts.append(path)
        rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# verify-hessian-bound
# ---------------------------------------------------------------------------


def random_mixture(rng, dimension=2):
    k = int(rng.integers(2, 6))
    w = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
    means = rng.uniform(-3.0, 3.0, (k, dimension))
    Q, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
    cov = Q @ np.diag(rng.uniform(0.5, 2.0, dimension)) @ Q.T
    return GaussianMixtureTarget(w / w.sum(), means, 0.5 * (cov + cov.T))


def fd_hessian_norm(potential, x, step=1e-5):
    """Spectral norm of the central-difference Hessian (differences of the gradient)."""
    d = x.shape[0]
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        H[:, j] = (potential.grad(x + e) - potential.grad(x - e)) / (2 * step)
    H = 0.5 * (H + H.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(H))))


def verify_hessian_bound(instances, points, seed, dimension=2, out_dir=None):
    rep = Report("verify-hessian-bound", seed, dict(instances=instances, points=points, dimension=dimension))
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        target = random_mixture(rng, dimension)
        bound = target.lipschitz_hint
        # half the points between modes, where the Hessian peaks; half in a wide box
        a = target.means[rng.integers(target.n_components, size=points)]
        c = target.means[rng.integers(target.n_components, size=points)]
        t = rng.random((points, 1))
        xs = np.where(np.arange(points)[:, None] % 2 == 0, a + t * (c - a), rng.uniform(-6, 6, (points, dimension)))
        est = max(fd_hessian_norm(target, x) for x in xs)
        worst = max(worst, est / bound)
    rep.check("max finite-difference ||Hess V|| / bound", worst, 1.0, worst <= 1.0)
    if out_dir:
        _mkdir(out_dir)
        rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# verify-dichotomy
# ---------------------------------------------------------------------------


def two_well_target():
    """1D two-well target 0.6 N(-3, 1) + 0.4 N(3, 1) (barrier about 3.8 above the deeper well)."""
    return GaussianMixtureTarget([0.6, 0.4], [[-3.0], [3.0]], 1.0)


def _restrict_density(mu, cell_mask):
    """mu(S) and mu|S = mu 1_S / mu(S) on the grid; (0, None) when mu(S) = 0."""
    vals = np.where(cell_mask.reshape(mu.grid.shape), mu.values, 0.0)
    mass = float(vals.sum() * mu.grid.cell_volume)
    if mass <= 0:
        return 0.0, None
    return mass, GridDensity(mu.grid, vals / mass, True)


def verify_dichotomy(potential, regions, grid, T, n_particles, seed, init, checkpoints=10, out_dir=None,
                     label="custom", h=None):
    """Entropy and chi-square dichotomies on the time-averaged LMC law.

    h defaults to 1/sqrt(T). At each checkpoint the averaged measure pools every
    ensemble so far into one histogram mu on the grid; mu(S) and mu|S are
    read off that histogram. FI compares mu with the whole target by central
    differences. The PI check uses the finite-volume PFI, which shares its
    faces with the grid Poincare constant of pi|S; that constant also stands
    in for the log-Sobolev constant of the LSI check.
    """
    grid = grid if isinstance(grid, Grid) else Grid.parse(grid)
    init = init if isinstance(init, InitSampler) else InitSampler.parse(init)
    h = step_size_preset("lsi", T) if h is None else h
    cfg = LmcConfig(h, T, n_particles, seed, record_every=1)
    params = dict(target=label, h=h, T=T, particles=n_particles, grid=grid.spec(), init=str(init),
                  regions=[r.label for r in regions], checkpoints=checkpoints, alpha_source="poincare_grid",
                  pfi_estimator="finite-volume Dirichlet form")
    rep = Report("verify-dichotomy", seed, params)
    pi_glob, pi_cond, pi_mass = _target_densities(potential, regions, grid)
    pi_glob_pos = GridDensity(grid, pi_glob.values + EPS, False).normalize()
    alphas = [poincare_constant_grid(p) for p in pi_cond]
    pts = grid.points()
    cell_masks = [r.contains(pts) for r in regions]
    hist = PartitionHistogram(grid, [whole_space()])
    marks = sorted({max(1, round(T * (j + 1) / checkpoints)) for j in range(checkpoints)})
    rows = []
    n_lsi_bad = n_pi_bad = n_pi_central_bad = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for ens in iter_lmc(cfg, potential, init):
            hist.add(ens.positions, np.zeros(ens.n_particles, dtype=np.int64))
            if ens.time_index not in marks:
                continue
            mu = hist.global_density()
            fi = fisher_information_grid(mu, pi_glob_pos)
            pfi = pfi_edge_form(mu, pi_glob)
            pfi_c = pfi_grid(mu, pi_glob_pos)
            for k, r in enumerate(regions):
                mass, mc = _restrict_density(mu, cell_masks[k])
                if mc is None:
                    ent = var = 0.0
                else:
                    ent, var = kl_divergence(mc, pi_cond[k]), chi2_variance(mc, pi_cond[k])
                lsi = dichotomy_check_lsi(fi, alphas[k], mass, ent)
                pi_res = dichotomy_check_pi(pfi, alphas[k], mass, pi_mass[k], var)
                pi_c = dichotomy_check_pi(pfi_c, alphas[k], mass, pi_mass[k], var)
                n_lsi_bad += not lsi.passed
                n_pi_bad += not pi_res.passed
                n_pi_central_bad += not pi_c.passed
                rows.append(dict(t=ens.time_index, region=r.label, mass=mass, target_mass=pi_mass[k], ent=ent,
                                 var=var, fi=fi, pfi=pfi, pfi_central=pfi_c, alpha=alphas[k],
                                 lsi_pass=lsi.passed, lsi_branch=lsi.branch, lsi_threshold=lsi.threshold,
                                 pi_pass=pi_res.passed, pi_lhs=pi_res.lhs, pi_threshold=pi_res.threshold))
    rep.results["rows"] = rows
    rep.results["pi_failures_with_central_difference_pfi"] = n_pi_central_bad
    rep.results["warnings"] = sorted({str(c.message) for c in caught})
    n = len(rows)
    rep.check(f"LSI dichotomy failures over {n} (checkpoint, region) pairs", n_lsi_bad, 0, n_lsi_bad == 0)
    rep.check(f"PI dichotomy failures over {n} (checkpoint, region) pairs", n_pi_bad, 0, n_pi_bad == 0)
    if out_dir:
        _mkdir(out_dir)
        path = os.path.join(out_dir, "dichotomy.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            keys = list(rows[0])
            w.writerow(keys)
            for row in rows:
                w.writerow([_fmt(row[k]) if isinstance(row[k], float) else row[k] for k in keys])
        rep.artifacts.append(path)
        rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# verify-poincare
# ---------------------------------------------------------------------------


def _density_on(grid, logp, region=None):
    pts = grid.points()
    vals = np.exp(logp(pts) - logp(pts).max())
    if region is not None:
        vals = np.where(region.contains(pts), vals, 0.0)
    return GridDensity(grid, vals.reshape(grid.shape), False).normalize()


def verify_poincare(bins=2000, seed=0, out_dir=None):
    """Calibrate the grid Poincare oracle against closed forms and the local LSI constant."""
    rep = Report("verify-poincare", seed, dict(bins=bins))
    g = Grid(((0.0, 1.0),), (bins,))
    uni = poincare_constant_grid(GridDensity(g, np.ones(g.shape), False).normalize())
    err = abs(uni / math.pi**2 - 1)
    rep.check("uniform [0,1]: rel. error vs pi^2", err, 0.01, err <= 0.01)
    for s in (0.5, 1.0, 2.0):
        g = Grid(((-8 * s, 8 * s),), (bins,))
        rho = poincare_constant_grid(_density_on(g, lambda x: -0.5 * x[:, 0] ** 2 / s**2))
        err = abs(rho * s**2 - 1)
        rep.check(f"N(0,{s:g}^2) truncated at 8 sigma: rel. error vs sigma^-2", err, 0.02, err <= 0.02)
    nu1 = preset_target("nu1")
    g = Grid(((-20.0, 5.0),), (bins,))
    left = VoronoiPartition(nu1)[0]
    rho = poincare_constant_grid(_density_on(g, nu1.log_density, left))
    lsi = nu1.weights.min() / nu1.weights.max() / nu1.sigma_sq_floor
    rep.check("nu1 left cell: constant >= sigma^-2 min w / max w", rho, lsi, rho >= lsi)
    rep.results.update(uniform=uni, nu1_left=rho)
    if out_dir:
        _mkdir(out_dir)
        rep.write(out_dir)
    return rep


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


COMMANDS = (
    "experiment-gmm",
    "experiment-restart",
    "verify-hypercube",
    "verify-moment-bound",
    "verify-hessian-bound",
    "verify-dichotomy",
    "verify-poincare",
)


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="condmix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=0):
        sp.add_argument("--seed", type=int, default=seed)
        sp.add_argument("--out", default=None, help="output directory (default: condmix-out/<command>)")
        return sp

    def lmc_args(sp):
        sp.add_argument("--preset", choices=["nu1", "nu2", "nu3"], default=None)
        sp.add_argument("--config", default=None, help="key = value file describing the target")
        sp.add_argument("--h", type=float, default=None)
        sp.add_argument("--T", type=int, default=None)
        sp.add_argument("--particles", type=int, default=None)
        sp.add_argument("--init", default=None, help="uniform:lo,hi | gauss:sigma | point:x1,...")
        sp.add_argument("--grid", default=None, help="lo,hi,bins[;lo,hi,bins]")
        sp.add_argument("--record-every", type=int, default=None)
        sp.add_argument("--region", action="append", default=None, help="voronoi:i or box:k,A=..,M=..")

    sp = common(sub.add_parser("experiment-gmm", help="LMC on a Gaussian mixture with divergence traces"))
    lmc_args(sp)
    sp = common(sub.add_parser("experiment-restart", help="terminal occupancy of restarted single chains"))
    lmc_args(sp)
    sp.add_argument("--counts", type=_int_list, default=[1, 10, 2000])
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--min-fraction", type=float, default=0.02)
    sp = common(sub.add_parser("verify-hypercube", help="exact sweep of the hypercube theorems"), seed=7)
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--instances", type=int, default=100)
    sp.add_argument("--T", type=int, default=256)
    sp = common(sub.add_parser("verify-moment-bound", help="exponential moment of LMC on a quadratic"))
    sp.add_argument("--dims", type=_int_list, default=[1, 2, 4])
    sp.add_argument("--h", type=float, default=0.05)
    sp.add_argument("--T", type=int, default=2000)
    sp.add_argument("--particles", type=int, default=20000)
    sp.add_argument("--m", type=float, default=1.0)
    sp.add_argument("--b", type=float, default=0.0)
    sp.add_argument("--L", type=float, default=1.0)
    sp = common(sub.add_parser("verify-hessian-bound", help="finite-difference Hessians vs the mixture bound"))
    sp.add_argument("--instances", type=int, default=50)
    sp.add_argument("--points", type=int, default=100)
    sp.add_argument("--dimension", type=int, default=2)
    sp = common(sub.add_parser("verify-dichotomy", help="conditional dichotomies on averaged LMC laws"))
    lmc_args(sp)
    sp.add_argument("--target", choices=["nu1", "two-well"], default="nu1")
    sp.add_argument("--checkpoints", type=int, default=10)
    sp = common(sub.add_parser("verify-poincare", help="calibrate the grid Poincare oracle"))
    sp.add_argument("--bins", type=int, default=2000)
    return p


def _normalise_argv(argv):
    # accept "verify hypercube" and "experiment gmm" as well as the dashed names
    if len(argv) >= 2 and argv[0] in ("verify", "experiment") and f"{argv[0]}-{argv[1]}" in COMMANDS:
        return [f"{argv[0]}-{argv[1]}"] + list(argv[2:])
    return list(argv)


def _lmc_target(args):
    file_cfg = read_config(args.config) if args.config else {}
    if args.preset:
        file_cfg["preset"] = args.preset
    if not file_cfg:
        file_cfg["preset"] = "nu3" if args.command == "experiment-restart" else "nu1"
    target = target_from_config(file_cfg)
    for key in ("h", "T", "particles", "init", "grid", "record_every"):
        if getattr(args, key, None) is None and key.lower() in file_cfg:
            raw = file_cfg[key.lower()]
            setattr(args, key, float(raw) if key == "h" else int(raw) if key in ("T", "particles", "record_every") else raw)
    if not args.region and "region" in file_cfg:
        args.region = file_cfg["region"]
    return target, file_cfg.get("preset")


def _run(args):
    out = args.out or os.path.join("condmix-out", args.command)
    cmd = args.command
    if cmd == "experiment-gmm":
        target, preset = _lmc_target(args)
        if not isinstance(target, GaussianMixtureTarget):
            raise ConfigError("experiment-gmm needs a Gaussian mixture target")
        T = args.T if args.T is not None else PRESET_ITERATIONS.get(preset, 500)
        regions = _resolve_regions(args.region, target)
        return experiment_gmm(target, args.h or 0.01, T, args.particles or 100_000, args.seed,
                              args.init or default_init(target), args.grid or default_grid(target), out,
                              args.record_every, preset, regions)
    if cmd == "experiment-restart":
        target, _ = _lmc_target(args)
        return experiment_restart(target, args.h or 0.01, args.T or 1000, args.counts, args.repeats, args.seed,
                                  args.init or default_init(target), out, args.min_fraction)
    if cmd == "verify-hypercube":
        return verify_hypercube(args.d, args.instances, args.seed, args.T, out)
    if cmd == "verify-moment-bound":
        return verify_moment_bound(args.dims, args.h, args.T, args.particles, args.seed, args.m, args.b, args.L, out)
    if cmd == "verify-hessian-bound":
        return verify_hessian_bound(args.instances, args.points, args.seed, args.dimension, out)
    if cmd == "verify-dichotomy":
        if args.target == "two-well" and not (args.preset or args.config):
            pot, label = two_well_target(), "two-well"
            grid = args.grid or "-8,8,320"
            init = args.init or "uniform:-8,8"
        else:
            pot, label = _lmc_target(args)
            grid = args.grid or default_grid(pot)
            init = args.init or default_init(pot)
        regions = _resolve_regions(args.region, pot)
        return verify_dichotomy(pot, regions, grid, args.T or 500, args.particles or 20_000, args.seed, init,
                                args.checkpoints, out, label or "custom", args.h)
    if cmd == "verify-poincare":
        return verify_poincare(args.bins, args.seed, out)
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None):
    argv = _normalise_argv(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        rep = _run(args)
    except (ConfigError, ValueError) as exc:
        print(f"condmix: configuration error: {exc}", file=sys.stderr)
        return 2
    rep.print_summary()
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
