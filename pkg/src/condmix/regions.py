"""Conditioning sets: Voronoi cells of a mixture, slab/ball boxes, and restriction."""

from dataclasses import dataclass
import math

import numpy as np


class Region:
    """A membership predicate over R^d.

    ``contains`` accepts a point ``(d,)`` or a batch ``(n, d)`` and returns a
    bool or a bool array.
    """

    def __init__(self, predicate, label):
        self._predicate = predicate
        self.label = label

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return bool(self._predicate(x[None, :])[0])
        return np.asarray(self._predicate(x), dtype=bool)

    def __repr__(self):
        return f"Region({self.label!r})"


def whole_space(label="all"):
    return Region(lambda x: np.ones(x.shape[0], dtype=bool), label)


def interval(lo=-math.inf, hi=math.inf, axis=0, label=None):
    """Axis-aligned slab lo <= x[axis] < hi (closed at both ends when hi is inf)."""
    if label is None:
        label = f"[{lo},{hi})@{axis}"
    return Region(lambda x: (x[:, axis] >= lo) & (x[:, axis] < hi), label)


def voronoi_cell_index(target, x):
    """Index of the component with the smallest Mahalanobis distance.

    Mixture weights do not enter. Ties go to the smallest index.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    diff = xb[:, None, :] - target.means[None, :, :]
    quad = np.einsum("nkd,de,nke->nk", diff, target.precision, diff)
    idx = np.argmin(quad, axis=1)
    return int(idx[0]) if single else idx


class VoronoiPartition:
    """The cells S_i = {x : p_i(x) >= p_j(x) for all j}, one Region per component."""

    def __init__(self, target):
        self.target = target
        self.cells = [
            Region(lambda x, i=i: voronoi_cell_index(target, x) == i, f"voronoi:{i}")
            for i in range(target.n_components)
        ]

    def index(self, x):
        return voronoi_cell_index(self.target, x)

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]


def default_box_size(dimension, epsilon):
    """A = M = d + log(1/epsilon)."""
    return dimension + math.log(1.0 / epsilon)


class BoxRegions:
    """R1 = [0, A] x B(0, M), R2 = [-A, 0) x B(0, M), R3 = the rest.

    The slab coordinate is measured along ``axis`` (default e_1); the ball
    is in the orthogonal complement. The plane theta_1 = 0 belongs to R1.
    """

    def __init__(self, A, M, axis=None, dimension=None):
        if A <= 0 or M <= 0:
            raise ValueError("A and M must be positive")
        self.A = float(A)
        self.M = float(M)
        if axis is None:
            if dimension is None:
                raise ValueError("give either axis or dimension")
            axis = np.zeros(dimension)
            axis[0] = 1.0
        axis = np.asarray(axis, dtype=np.float64)
        self.axis = axis / np.linalg.norm(axis)

    def index(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        single = theta.ndim == 1
        tb = np.atleast_2d(theta)
        along = tb @ self.axis
        perp = np.linalg.norm(tb - along[:, None] * self.axis[None, :], axis=1)
        in_ball = perp <= self.M
        out = np.full(tb.shape[0], 3, dtype=np.int64)
        out[in_ball & (along >= 0) & (along <= self.A)] = 1
        out[in_ball & (along < 0) & (along >= -self.A)] = 2
        return int(out[0]) if single else out

    def region(self, k):
        if k not in (1, 2, 3):
            raise ValueError("box regions are numbered 1, 2, 3")
        return Region(lambda x: self.index(x) == k, f"box:{k},A={self.A:g},M={self.M:g}")


def box_region_index(boxes, theta):
    return boxes.index(theta)


@dataclass
class Restriction:
    """Empirical conditional law: the fraction inside and the inside points."""

    mass: float
    positions: np.ndarray

    @property
    def is_empty(self):
        """True when no point falls in the region; the conditional is undefined."""
        return self.positions.shape[0] == 0

    def __iter__(self):
        return iter((self.mass, self.positions))


def restrict(positions, region):
    """Restrict an ensemble (or pooled trajectory) to ``region``.

    ``positions`` may be an array ``(n, d)`` or any object carrying one in a
    ``positions`` / ``pooled_positions`` attribute.
    """
    for attr in ("positions", "pooled_positions"):
        if hasattr(positions, attr):
            positions = getattr(positions, attr)
            break
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim == 1:
        positions = positions[:, None]
    if positions.shape[0] == 0:
        raise ValueError("cannot restrict an empty position set")
    inside = region.contains(positions)
    return Restriction(mass=float(inside.mean()), positions=positions[inside])


def parse_region_spec(spec, target=None, dimension=None):
    """Parse ``voronoi:<i>`` or ``box:<k>,A=<a>,M=<m>`` into a Region."""
    kind, _, rest = spec.strip().partition(":")
    kind = kind.strip().lower()
    if kind == "voronoi":
        if target is None:
            raise ValueError("voronoi regions need a mixture target")
        return VoronoiPartition(target)[int(rest)]
    if kind == "box":
        parts = [p.strip() for p in rest.split(",") if p.strip()]
        k = int(parts[0])
        kw = dict(p.split("=", 1) for p in parts[1:])
        if dimension is None:
            dimension = target.dimension if target is not None else None
        boxes = BoxRegions(float(kw["A"]), float(kw["M"]), dimension=dimension)
        return boxes.region(k)
    if kind in ("all", "whole"):
        return whole_space()
    raise ValueError(f"unknown region spec {spec!r}")
