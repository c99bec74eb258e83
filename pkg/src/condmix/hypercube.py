"""Exact analysis of the lazy Gibbs sampler on {0,1}^d.

Vertices are integers in ``range(2**d)``; bit ``k`` is coordinate ``k``.
A :class:`GibbsChain` may live on a subset of the cube (after
conditioning), in which case ``states`` lists the vertices it covers.
"""

from dataclasses import dataclass, field
import os
import zlib

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import expit

from . import _kernels

MAX_D = 14
MAX_CONDUCTANCE_STATES = 20


class ReducibleChainError(ValueError):
    pass


class KernelCorruptionError(RuntimeError):
    """The two Dirichlet-form formulas disagree."""


class BoundViolation(AssertionError):
    def __init__(self, message, case_path=None):
        super().__init__(message if case_path is None else f"{message} (case file: {case_path})")
        self.case_path = case_path


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class EnergyFunction:
    d: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 1 <= self.d <= MAX_D:
            raise ValueError(f"d must be in [1, {MAX_D}]")
        if self.values.shape != (1 << self.d,):
            raise ValueError("need one value per vertex")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("energies must be finite and nonnegative")

    @property
    def n(self):
        return 1 << self.d


@dataclass
class Subset:
    mask: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError("subset must be nonempty")

    @classmethod
    def from_vertices(cls, d, vertices, label=""):
        mask = np.zeros(1 << d, dtype=bool)
        mask[np.asarray(list(vertices), dtype=np.int64)] = True
        return cls(mask, label)

    @classmethod
    def full(cls, d):
        return cls(np.ones(1 << d, dtype=bool), "cube")

    @property
    def vertices(self):
        return np.flatnonzero(self.mask)

    def __len__(self):
        return int(self.mask.sum())


def bit_partition(d, bits=(0,)):
    """Split the cube by the values of the given coordinates (subcubes)."""
    v = np.arange(1 << d)
    key = np.zeros(1 << d, dtype=np.int64)
    for j, b in enumerate(bits):
        key |= ((v >> b) & 1) << j
    return [Subset(key == k, f"bits{tuple(bits)}={k}") for k in range(1 << len(bits))]


@dataclass
class GibbsChain:
    d: int
    states: np.ndarray
    stationary: np.ndarray
    kernel: sp.csr_matrix
    energy: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.states.shape[0]

    def dense(self):
        return self.kernel.toarray()


@dataclass
class SpectralReport:
    gap: float
    conductance: float
    cheeger_lo: float
    cheeger_hi: float
    quasiconvex_radius: int = None
    bound_5_2: float = None

    @property
    def sandwich_holds(self):
        return self.cheeger_lo - 1e-9 <= self.gap <= self.cheeger_hi + 1e-9


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def neighbours(d):
    """Table ``(2**d, d)`` of Hamming neighbours."""
    v = np.arange(1 << d, dtype=np.int64)
    return v[:, None] ^ (np.int64(1) << np.arange(d, dtype=np.int64))[None, :]


def build_lazy_gibbs(f):
    """Lazy Gibbs kernel p(x, y) = pi(y) / (2d (pi(x) + pi(y))) on Hamming edges."""
    d, n = f.d, f.n
    vals = f.values
    nbr = neighbours(d)
    # pi(y) / (pi(x) + pi(y)) = expit(f(x) - f(y))
    off = expit(vals[:, None] - vals[nbr]) / (2.0 * d)
    diag = 1.0 - off.sum(axis=1)
    rows = np.concatenate([np.repeat(np.arange(n), d), np.arange(n)])
    cols = np.concatenate([nbr.ravel(), np.arange(n)])
    data = np.concatenate([off.ravel(), diag])
    P = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    w = np.exp(-(vals - vals.min()))
    return GibbsChain(d, np.arange(n), w / w.sum(), P, vals.copy())


def _local_mask(chain, S):
    mask = np.asarray(S.mask if isinstance(S, Subset) else S, dtype=bool)
    if mask.shape[0] == chain.n:
        return mask
    if mask.shape[0] == 1 << chain.d:
        return mask[chain.states]
    raise ValueError("subset mask does not match the chain")


def condition_kernel(chain, S):
    """Restrict to S, folding every rejected move into the diagonal."""
    mask = _local_mask(chain, S)
    if not mask.any():
        raise ValueError("subset must be nonempty")
    keep = np.flatnonzero(mask)
    P = chain.kernel[keep][:, keep].tocsr()
    lost = 1.0 - np.asarray(P.sum(axis=1)).ravel()
    P = (P + sp.diags(lost)).tocsr()
    pi = chain.stationary[keep]
    energy = None if chain.energy is None else chain.energy[keep]
    return GibbsChain(chain.d, chain.states[keep], pi / pi.sum(), P, energy)


def kernel_violations(chain):
    """Largest deviations: (row-sum error, laziness shortfall, detailed-balance error)."""
    P = chain.kernel
    rows = float(np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0)))
    lazy = float(max(0.0, 0.5 - P.diagonal().min()))
    F = sp.diags(chain.stationary) @ P
    db = abs(F - F.T)
    balance = float(db.max()) if db.nnz else 0.0
    return rows, lazy, balance


def dirichlet_form(chain, phi, tol=1e-10):
    """E(phi, phi), by the edge sum; cross-checked against <phi, (I - P) phi>_pi."""
    phi = np.asarray(phi, dtype=np.float64)
    pi = chain.stationary
    P = chain.kernel.tocoo()
    edge = 0.5 * float(np.sum(pi[P.row] * P.data * (phi[P.row] - phi[P.col]) ** 2))
    inner = float(np.sum(pi * phi * (phi - chain.kernel @ phi)))
    scale = max(1.0, float(np.sum(pi * phi**2)))
    if abs(edge - inner) > tol * scale:
        raise KernelCorruptionError(f"Dirichlet forms disagree: {edge} vs {inner}")
    return edge


def variance(pi, phi):
    mean = np.sum(pi * phi)
    return float(np.sum(pi * (phi - mean) ** 2))


def _check_irreducible(chain):
    A = chain.kernel.copy()
    A.setdiag(0)
    A.eliminate_zeros()
    k, labels = connected_components(A, directed=False)
    if k > 1:
        comp = chain.states[labels == labels[0]]
        raise ReducibleChainError(
            f"chain splits into {k} components; one is {comp.tolist()[:16]}"
            + ("..." if comp.size > 16 else "")
        )


def symmetrized(chain):
    """D^{1/2} P D^{-1/2} as a dense symmetric matrix."""
    s = np.sqrt(chain.stationary)
    M = chain.dense() * s[:, None] / s[None, :]
    return 0.5 * (M + M.T)


def spectral_gap(chain):
    """1 - lambda_2 of the reversible kernel (a single state has gap 1)."""
    if chain.n == 1:
        return 1.0
    _check_irreducible(chain)
    ev = np.linalg.eigvalsh(symmetrized(chain))
    return float(1.0 - ev[-2])


def conductance(chain):
    """Exact bottleneck ratio min_{V1} Q(V1, V1^c) / min(pi(V1), 1 - pi(V1))."""
    n = chain.n
    if n > MAX_CONDUCTANCE_STATES:
        raise ValueError(f"{n} states is too many to enumerate (limit {MAX_CONDUCTANCE_STATES})")
    if n == 1:
        return 1.0
    flow = chain.stationary[:, None] * chain.dense()
    np.fill_diagonal(flow, 0.0)
    phi, _ = _kernels.conductance_search(np.ascontiguousarray(flow), np.ascontiguousarray(chain.stationary))
    return float(phi)


def spectral_report(chain, radius=None):
    gap = spectral_gap(chain)
    phi = conductance(chain)
    rep = SpectralReport(gap, phi, phi**2 / 2.0, 2.0 * phi, radius)
    if radius:
        rep.bound_5_2 = 1.0 / (16.0 * chain.d**2 * radius**2)
    return rep


# ---------------------------------------------------------------------------
# Quasi-convexity
# ---------------------------------------------------------------------------


def _induced_neighbours(d, mask):
    keep = np.flatnonzero(mask)
    remap = np.full(1 << d, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    return keep, remap[neighbours(d)[keep]]


def is_connected(d, mask):
    keep, nbr = _induced_neighbours(d, mask)
    if keep.size <= 1:
        return True
    r, c = np.nonzero(nbr >= 0)
    A = sp.csr_matrix((np.ones(r.size), (r, nbr[r, c])), shape=(keep.size, keep.size))
    return connected_components(A, directed=False)[0] == 1


def quasiconvex_radius(f, S):
    """Find (v*, D) certifying quasi-convexity of f on the subgraph induced by S.

    v* must be a local minimum inside S. Every other v in S needs all its
    in-S neighbours one BFS step closer to v* to have energy <= f(v); D is
    the BFS eccentricity of v*. Returns the smallest D (ties to the smallest
    vertex), or None if no vertex qualifies or S is disconnected.
    """
    mask = np.asarray(S.mask if isinstance(S, Subset) else S, dtype=bool)
    if not is_connected(f.d, mask):
        return None
    keep, nbr = _induced_neighbours(f.d, mask)
    v, D = _kernels.quasiconvex_search(np.ascontiguousarray(nbr), np.ascontiguousarray(f.values[keep]))
    if v < 0:
        return None
    return int(keep[v]), int(D)


# ---------------------------------------------------------------------------
# Dynamics and theorem checks
# ---------------------------------------------------------------------------


def evolve_distribution(chain, mu0, T):
    """Exact laws mu_0, ..., mu_T with mu_{t+1} = mu_t P."""
    mu = np.asarray(mu0, dtype=np.float64)
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise ValueError("mu0 must be a probability vector")
    PT = chain.kernel.T.tocsr()
    out = np.empty((T + 1, mu.size))
    out[0] = mu
    for t in range(T):
        out[t + 1] = PT @ out[t]
    return out


def conditional_variance(mu, pi, mask):
    """(mu(X), Var_{pi|X}[mu|X / pi|X]); the variance is nan when mu(X) = 0."""
    m = float(mu[mask].sum())
    if m <= 0:
        return m, float("nan")
    w = pi[mask] / pi[mask].sum()
    r = (mu[mask] / m) / w
    return m, variance(w, r)


@dataclass
class SubsetReport:
    label: str
    alpha: float
    target_mass: float
    min_mass: float
    small_mass_all_t: bool
    small_mass_some_t: bool
    undefined_steps: int
    # (1/T) sum_t Var_t / mu_t(X)^2  vs  2 Var0 / (pi(X)^2 alpha T)
    lhs_ratio: float
    rhs_ratio: float
    # (1/T) sum_t Var_t  vs  2 Var0 / (pi(X)^2 alpha T)
    lhs_plain: float
    # (1/T) sum_t mu_t(X)^2 Var_t  vs  pi(X) Var0 / (alpha T)
    lhs_weighted: float
    rhs_weighted: float
    # headline: (1/T) sum_t Var_t  vs  Var0 / (alpha sqrt T)
    rhs_headline: float

    @property
    def ratio_slack(self):
        return self.rhs_ratio - self.lhs_ratio

    @property
    def plain_slack(self):
        return self.rhs_ratio - self.lhs_plain

    @property
    def weighted_slack(self):
        return self.rhs_weighted - self.lhs_weighted

    @property
    def headline_holds(self):
        return self.small_mass_all_t or self.lhs_plain <= self.rhs_headline


@dataclass
class Theorem51Report:
    T: int
    var0: float
    dirichlet_sum: float
    subsets: list

    @property
    def telescoping_slack(self):
        return self.var0 - self.dirichlet_sum


def theorem51_check(chain, partition, mu0, T):
    """Evaluate the conditional chi-square mixing inequalities exactly.

    Sums run over t = 0, ..., T-1. Steps where a subset carries no mass have
    no conditional law and contribute nothing; they are counted in
    ``undefined_steps``.
    """
    masks = [_local_mask(chain, S) for S in partition]
    cover = np.sum(masks, axis=0)
    if np.any(cover != 1):
        raise ValueError("partition must cover every state exactly once")
    pi = chain.stationary
    mus = evolve_distribution(chain, mu0, T)
    phis = mus / pi[None, :]
    var0 = variance(pi, phis[0])
    dsum = sum(dirichlet_form(chain, phis[t]) for t in range(T))
    reports = []
    for S, mask in zip(partition, masks):
        sub = condition_kernel(chain, mask)
        alpha = spectral_gap(sub)
        w = float(pi[mask].sum())
        masses = np.empty(T)
        vars_ = np.empty(T)
        for t in range(T):
            masses[t], vars_[t] = conditional_variance(mus[t], pi, mask)
        defined = masses > 0
        v = np.where(defined, vars_, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(defined, v / masses**2, 0.0)
        thresh = w * T ** -0.25
        reports.append(
            SubsetReport(
                label=getattr(S, "label", ""),
                alpha=alpha,
                target_mass=w,
                min_mass=float(masses.min()),
                small_mass_all_t=bool(np.all(masses <= thresh)),
                small_mass_some_t=bool(np.any(masses <= thresh)),
                undefined_steps=int((~defined).sum()),
                lhs_ratio=float(ratio.mean()),
                rhs_ratio=2.0 * var0 / (w**2 * alpha * T),
                lhs_plain=float(v.mean()),
                lhs_weighted=float(np.mean(masses**2 * v)),
                rhs_weighted=w * var0 / (alpha * T),
                rhs_headline=var0 / (alpha * np.sqrt(T)),
            )
        )
    return Theorem51Report(T, var0, dsum, reports)


@dataclass
class Theorem52Report:
    v_star: int
    radius: int
    gap: float
    bound: float

    @property
    def ratio(self):
        return self.gap / self.bound if self.bound > 0 else float("inf")

    @property
    def passed(self):
        return self.gap >= self.bound


def theorem52_check(f, S, case_dir=None):
    """Conditioned spectral gap against 1 / (16 d^2 D^2).

    Raises :class:`BoundViolation` (after writing a case file when
    ``case_dir`` is given) if the gap falls below the bound. A single-vertex
    subset has radius 0 and passes with an infinite bound reported as 0.
    """
    qc = quasiconvex_radius(f, S)
    if qc is None:
        raise ValueError("energy is not quasi-convex on this subset")
    v_star, D = qc
    chain = condition_kernel(build_lazy_gibbs(f), S)
    gap = spectral_gap(chain)
    bound = 0.0 if D == 0 else 1.0 / (16.0 * f.d**2 * D**2)
    rep = Theorem52Report(v_star, D, gap, bound)
    if not rep.passed:
        path = None
        if case_dir is not None:
            os.makedirs(case_dir, exist_ok=True)
            path = os.path.join(case_dir, f"gapbound_d{f.d}_v{v_star}_{zlib.crc32(f.values.tobytes()):08x}.case")
            save_energy(path, f, S)
        raise BoundViolation(f"gap {gap:.6g} < bound {bound:.6g} (d={f.d}, D={D})", path)
    return rep


# ---------------------------------------------------------------------------
# Energy constructors and file I/O
# ---------------------------------------------------------------------------


def linear_energy(d, c):
    """f(x) = c^T x, shifted so the minimum is zero."""
    c = np.asarray(c, dtype=np.float64)
    bits = (np.arange(1 << d)[:, None] >> np.arange(d)[None, :]) & 1
    vals = bits @ c
    return EnergyFunction(d, vals - vals.min())


def two_well_energy(d, barrier=10.0, split_bit=0):
    """Two basins separated along ``split_bit``.

    With h the Hamming weight and k = d // 2, a vertex is raised to
    ``barrier`` when its split bit is 0 and h >= k, or when its split bit is
    1 and h <= k. Every edge across the split then touches a raised vertex.
    """
    v = np.arange(1 << d)
    hw = np.array([bin(int(x)).count("1") for x in v])
    side = (v >> split_bit) & 1
    k = d // 2
    high = ((side == 0) & (hw >= k)) | ((side == 1) & (hw <= k))
    return EnergyFunction(d, np.where(high, float(barrier), 0.0))


def save_energy(path, f, S=None):
    """Write ``bitmask value`` per line, then ``mask <0/1 string>`` if a subset is given."""
    with open(path, "w") as fh:
        for v, val in enumerate(f.values):
            fh.write(f"{v:0{f.d}b} {float(val)!r}\n")
        if S is not None:
            mask = S.mask if isinstance(S, Subset) else np.asarray(S, dtype=bool)
            fh.write("mask " + "".join("1" if m else "0" for m in mask) + "\n")


def load_energy(path):
    """Inverse of :func:`save_energy`; returns ``(EnergyFunction, Subset or None)``."""
    entries, mask = {}, None
    width = None
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, val = line.split()
            if key == "mask":
                mask = np.array([ch == "1" for ch in val])
                continue
            width = len(key) if width is None else width
            entries[int(key, 2)] = float(val)
    if width is None:
        raise ValueError(f"{path}: no vertex lines")
    d = width
    vals = np.empty(1 << d)
    if sorted(entries) != list(range(1 << d)):
        raise ValueError(f"{path}: expected all {1 << d} vertices")
    for k, val in entries.items():
        vals[k] = val
    f = EnergyFunction(d, vals)
    return f, (None if mask is None else Subset(mask, "file"))


def grow_connected_subset(d, size, rng, start=None):
    """Random connected vertex set of the given size, grown one neighbour at a time."""
    nbr = neighbours(d)
    start = int(rng.integers(1 << d)) if start is None else int(start)
    members = [start]
    mask = np.zeros(1 << d, dtype=bool)
    mask[start] = True
    while len(members) < size:
        frontier = np.unique(nbr[np.array(members)].ravel())
        frontier = frontier[~mask[frontier]]
        if frontier.size == 0:
            break
        v = int(rng.choice(frontier))
        mask[v] = True
        members.append(v)
    return mask


def _bfs(d, mask, source):
    keep, nbr = _induced_neighbours(d, mask)
    local = {int(v): i for i, v in enumerate(keep)}
    dist = np.full(keep.size, -1)
    dist[local[source]] = 0
    frontier = [local[source]]
    while frontier:
        nxt = []
        for a in frontier:
            for u in nbr[a]:
                if u >= 0 and dist[u] < 0:
                    dist[u] = dist[a] + 1
                    nxt.append(u)
        frontier = nxt
    full = np.full(1 << d, -1)
    full[keep] = dist
    return full


def random_quasiconvex_instance(d, rng, kind=None, max_energy=8):
    """A random (energy, subset) pair that is quasi-convex by construction.

    kind 0: f = c^T x on the whole cube; 1: c^T x on a random subcube;
    2: a nondecreasing function of the in-subset distance to a random centre
    on a random connected subset; 3: random integer energies on a random
    connected subset, rejection-sampled until quasi-convex (falls back to 2).
    """
    kind = int(rng.integers(4)) if kind is None else kind
    n = 1 << d
    if kind == 0:
        c = rng.uniform(-3.0, 3.0, d)
        return linear_energy(d, c), Subset.full(d)
    if kind == 1:
        fixed = rng.random(d) < 0.4
        if fixed.all():
            fixed[rng.integers(d)] = False
        pattern = rng.integers(0, 2, d)
        v = np.arange(n)
        bits = (v[:, None] >> np.arange(d)[None, :]) & 1
        mask = np.all((bits == pattern[None, :]) | ~fixed[None, :], axis=1)
        c = rng.uniform(-3.0, 3.0, d)
        return linear_energy(d, c), Subset(mask, "subcube")
    if kind == 3:
        for _ in range(200):
            mask = grow_connected_subset(d, int(rng.integers(2, min(n, 12) + 1)), rng)
            f = EnergyFunction(d, rng.integers(0, max_energy + 1, n).astype(float))
            if quasiconvex_radius(f, mask) is not None:
                return f, Subset(mask, "rejection")
    mask = grow_connected_subset(d, int(rng.integers(2, n + 1)), rng)
    centre = int(rng.choice(np.flatnonzero(mask)))
    dist = _bfs(d, mask, centre)
    steps = np.cumsum(rng.integers(0, 3, d * 2 + 2)).astype(float)
    vals = rng.integers(0, max_energy + 1, n).astype(float)
    vals[mask] = steps[dist[mask]]
    return EnergyFunction(d, vals), Subset(mask, "radial")
