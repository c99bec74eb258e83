"""Grid estimators for divergences between an empirical law and a target.

Densities live on 1D or 2D rectangular grids. Every estimator takes two
:class:`GridDensity` objects on the same :class:`Grid`; integrals are
Riemann sums over cell centres.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

DEFAULT_EPS = 1e-12


class UndefinedConditionalError(ValueError):
    """The conditioning set carries no mass, so the conditional law is undefined."""


class IncompatibleGridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    bounds: tuple
    bins: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        bins = tuple(int(b) for b in self.bins)
        if len(bounds) not in (1, 2) or len(bounds) != len(bins):
            raise ValueError("grids are 1D or 2D, with one bin count per axis")
        for (lo, hi), b in zip(bounds, bins):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError("grid bounds must be finite with lo < hi")
            if b < 8:
                raise ValueError("grids need at least 8 bins per axis")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "bins", bins)

    @classmethod
    def parse(cls, spec):
        """``lo,hi,bins[;lo,hi,bins]``."""
        bounds, bins = [], []
        for axis in spec.split(";"):
            lo, hi, b = axis.split(",")
            bounds.append((float(lo), float(hi)))
            bins.append(int(b))
        return cls(tuple(bounds), tuple(bins))

    @property
    def dimension(self):
        return len(self.bins)

    @property
    def shape(self):
        return self.bins

    @property
    def spacing(self):
        return tuple((hi - lo) / b for (lo, hi), b in zip(self.bounds, self.bins))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def edges(self):
        return [np.linspace(lo, hi, b + 1) for (lo, hi), b in zip(self.bounds, self.bins)]

    @property
    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def points(self):
        """Cell centres as an array ``(n_cells, d)`` in C order."""
        mesh = np.meshgrid(*self.centers, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def spec(self):
        return ";".join(f"{lo:g},{hi:g},{b}" for (lo, hi), b in zip(self.bounds, self.bins))


@dataclass
class GridDensity:
    grid: Grid
    values: np.ndarray
    normalized: bool = True
    meta: dict = field(default_factory=dict)

    def total(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def normalize(self):
        tot = self.total()
        if tot <= 0:
            raise UndefinedConditionalError("density has zero mass on the grid")
        return GridDensity(self.grid, self.values / tot, True, dict(self.meta))


def _check(mu, pi):
    if mu.grid != pi.grid:
        raise IncompatibleGridError(f"{mu.grid} vs {pi.grid}")
    return mu.values, pi.values, mu.grid.cell_volume


def target_conditional_density(potential, region, grid, eps=0.0):
    """Discretised pi restricted to ``region``, normalised on the grid.

    exp(-V) is evaluated at cell centres after subtracting the smallest V
    on the region's cells, so nothing underflows at the mode.
    """
    pts = grid.points()
    inside = region.contains(pts)
    if not inside.any():
        raise UndefinedConditionalError(f"region {region.label} misses every grid cell")
    V = np.asarray(potential.value(pts), dtype=np.float64)
    vals = np.zeros(pts.shape[0])
    vals[inside] = np.exp(-(V[inside] - V[inside].min())) + eps
    vals = vals.reshape(grid.shape)
    dens = GridDensity(grid, vals, False, {"region": region.label})
    return dens.normalize()


def empirical_conditional_density(positions, region, grid, eps=DEFAULT_EPS):
    """Histogram of the in-region points, smoothed by ``eps`` per in-region cell.

    Cells whose centre lies outside the region are zeroed. ``meta`` records
    the sample count, points falling off the grid, and points dropped in
    boundary cells.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim == 1:
        positions = positions[:, None]
    inside = region.contains(positions)
    pts = positions[inside]
    n_in = pts.shape[0]
    if n_in == 0:
        raise UndefinedConditionalError(f"no samples in region {region.label}")
    counts, _ = np.histogramdd(pts, bins=grid.edges)
    on_grid = int(counts.sum())
    cell_in = region.contains(grid.points()).reshape(grid.shape)
    dropped = int(counts[~cell_in].sum())
    vals = np.where(cell_in, counts / (n_in * grid.cell_volume) + eps, 0.0)
    meta = {
        "region": region.label,
        "n_samples": n_in,
        "n_outside_grid": n_in - on_grid,
        "n_boundary_dropped": dropped,
        "smoothing_eps": eps,
    }
    return GridDensity(grid, vals, False, meta).normalize()


def kl_divergence(mu, pi):
    """KL(mu || pi) = sum mu log(mu / pi) vol, clipped at zero."""
    m, p, vol = _check(mu, pi)
    pos = m > 0
    if np.any(pos & (p <= 0)):
        return math.inf
    val = float(np.sum(m[pos] * np.log(m[pos] / p[pos])) * vol)
    return max(0.0, val)


def tv_distance(mu, pi):
    m, p, vol = _check(mu, pi)
    return float(0.5 * np.sum(np.abs(m - p)) * vol)


def chi2_variance(mu, pi):
    """Var_pi[mu / pi] = sum pi (mu/pi - 1)^2 vol."""
    m, p, vol = _check(mu, pi)
    pos = p > 0
    if np.any(~pos & (m > 0)):
        return math.inf
    r = m[pos] / p[pos]
    return float(np.sum(p[pos] * (r - 1.0) ** 2) * vol)


def _grad_sq(f, grid):
    g = np.gradient(f, *grid.spacing, edge_order=2)
    if grid.dimension == 1:
        return g**2
    return sum(gi**2 for gi in g)


def _require_positive(mu, pi):
    m, p, vol = _check(mu, pi)
    if np.any(m <= 0) or np.any(p <= 0):
        raise ValueError("Fisher-type functionals need strictly positive densities")
    return m, p, vol


def fisher_information_grid(mu, pi, grid=None):
    """FI(mu || pi) = int ||grad log(mu / pi)||^2 dmu."""
    m, p, vol = _require_positive(mu, pi)
    g2 = _grad_sq(np.log(m) - np.log(p), mu.grid)
    return float(np.sum(g2 * m) * vol)


def pfi_grid(mu, pi, grid=None):
    """Poincare Fisher information int ||grad(mu / pi)||^2 dpi."""
    m, p, vol = _require_positive(mu, pi)
    g2 = _grad_sq(m / p, mu.grid)
    return float(np.sum(g2 * p) * vol)


def pfi_edge_form(mu, pi):
    """PFI as the finite-volume Dirichlet form of mu / pi.

    Sums (pi_a + pi_b) / 2 * ((g_a - g_b) / h)^2 * vol over adjacent cells,
    g = mu / pi, using the same faces and weights as
    :func:`poincare_constant_grid`, so the discrete Poincare inequality
    applies to it exactly. Cells with pi = 0 carry no faces.
    """
    m, p, vol = _check(mu, pi)
    grid = mu.grid
    support = (p > 0).ravel()
    a, b, inv_h2 = _neighbour_pairs(grid, support)
    pf, mf = p.ravel(), m.ravel()
    g = np.zeros_like(pf)
    g[support] = mf[support] / pf[support]
    if np.any(mf[~support] > 0):
        return math.inf
    return float(np.sum(0.5 * (pf[a] + pf[b]) * inv_h2 * (g[a] - g[b]) ** 2) * vol)


# ---------------------------------------------------------------------------
# Poincare constant of a grid density
# ---------------------------------------------------------------------------


def _neighbour_pairs(grid, support):
    """Index pairs (flat) of support cells adjacent along some axis, and 1/h^2."""
    idx = np.arange(support.size).reshape(grid.shape)
    sup = support.reshape(grid.shape)
    pairs = []
    for axis, h in enumerate(grid.spacing):
        lo = [slice(None)] * grid.dimension
        hi = [slice(None)] * grid.dimension
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        both = sup[tuple(lo)] & sup[tuple(hi)]
        a = idx[tuple(lo)][both]
        b = idx[tuple(hi)][both]
        pairs.append((a, b, np.full(a.shape, 1.0 / h**2)))
    a = np.concatenate([p[0] for p in pairs])
    b = np.concatenate([p[1] for p in pairs])
    s = np.concatenate([p[2] for p in pairs])
    return a, b, s


def poincare_constant_grid(pi, grid=None, maxiter=20000):
    """Second-smallest eigenvalue of f -> -(1/pi) div(pi grad f) on the support.

    Finite volumes with zero flux through the outer boundary and through the
    boundary of the support; edge weights are the mean of the two cell
    densities.
    """
    grid = pi.grid
    vals = pi.values.ravel()
    support = vals > 0
    keep = np.flatnonzero(support)
    n = keep.size
    if n < 2:
        raise ValueError("need at least two support cells")
    w_cell = vals[keep]
    remap = np.full(vals.size, -1)
    remap[keep] = np.arange(n)
    a, b, inv_h2 = _neighbour_pairs(grid, support)
    a, b = remap[a], remap[b]
    w = 0.5 * (w_cell[a] + w_cell[b]) * inv_h2
    s = 1.0 / np.sqrt(w_cell)

    if grid.dimension == 1:
        # support cells are consecutive on the line; a missing edge splits it
        diag = np.zeros(n)
        np.add.at(diag, a, w)
        np.add.at(diag, b, w)
        off = np.zeros(n - 1)
        off[a] = -w * s[a] * s[b]
        ev = eigh_tridiagonal(diag * s * s, off, eigvals_only=True, select="i", select_range=(0, 1))
        return float(max(ev[1], 0.0))

    K = sp.coo_matrix((np.concatenate([-w, -w]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n)).tocsr()
    deg = -np.asarray(K.sum(axis=1)).ravel()
    K = K + sp.diags(deg)
    S = sp.diags(s)
    A = (S @ K @ S).tocsc()
    if n <= 1500:
        ev = np.linalg.eigvalsh(A.toarray())[:2]
    else:
        shift = -1e-3 * float(np.max(np.abs(deg * s * s)) / n)
        try:
            ev = np.sort(eigsh(A, k=2, sigma=shift, which="LM", maxiter=maxiter, return_eigenvectors=False))
        except ArpackNoConvergence as exc:
            raise RuntimeError("Poincare eigensolve did not converge") from exc
    return float(max(ev[1], 0.0))


# ---------------------------------------------------------------------------
# Reports and dichotomy checks
# ---------------------------------------------------------------------------


@dataclass
class DivergenceReport:
    kl: float
    tv: float
    chi2_var: float
    region_mass: float
    n_samples: int
    smoothing_eps: float


def divergence_report(mu, pi, region_mass=1.0, n_samples=0, smoothing_eps=DEFAULT_EPS):
    return DivergenceReport(
        kl=kl_divergence(mu, pi),
        tv=tv_distance(mu, pi),
        chi2_var=chi2_variance(mu, pi),
        region_mass=float(region_mass),
        n_samples=int(n_samples),
        smoothing_eps=float(smoothing_eps),
    )


@dataclass
class DichotomyResult:
    passed: bool
    branch: str
    lhs: float
    threshold: float


def dichotomy_check_lsi(fi, alpha, region_mass, conditional_ent):
    """Either mu(S) <= sqrt(FI / alpha) or Ent_{pi|S}[mu|S / pi|S] <= sqrt(FI / alpha)."""
    if alpha <= 0 or fi < 0:
        raise ValueError("need alpha > 0 and fi >= 0")
    thr = math.sqrt(fi) / math.sqrt(alpha)
    if region_mass <= thr:
        return DichotomyResult(True, "small-mass", float(region_mass), thr)
    if conditional_ent <= thr:
        return DichotomyResult(True, "conditional", float(conditional_ent), thr)
    return DichotomyResult(False, "none", float(conditional_ent), thr)


def dichotomy_check_pi(pfi, rho, region_mass, target_region_mass, conditional_var):
    """mu(S)^2 Var_{pi|S}[mu|S / pi|S] <= PFI * pi(S) / rho."""
    if rho <= 0 or pfi < 0:
        raise ValueError("need rho > 0 and pfi >= 0")
    lhs = float(region_mass) ** 2 * float(conditional_var)
    thr = float(pfi) * float(target_region_mass) / float(rho)
    return DichotomyResult(lhs <= thr, "inequality", lhs, thr)
