"""Hot inner loops, each with a numba kernel and a numpy twin.

The public names at the bottom of the module dispatch on
:data:`condmix._accel.USE_NUMBA`. Both variants are importable directly so
tests and the benchmark can compare them.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Gaussian mixture: log density and potential gradient
# ---------------------------------------------------------------------------


def gmm_eval_grad_numpy(x, means, prec, log_coef):
    """Return ``(log pi(x), grad V(x))`` for a shared-covariance mixture.

    ``log_coef[i]`` is ``log w_i - 0.5 * log det(2 pi Sigma)``.
    """
    diff = x[:, None, :] - means[None, :, :]
    quad = np.einsum("nkd,de,nke->nk", diff, prec, diff)
    logits = log_coef[None, :] - 0.5 * quad
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    tot = ex.sum(axis=1, keepdims=True)
    logp = mx[:, 0] + np.log(tot[:, 0])
    resp = ex / tot
    mbar = resp @ means
    grad = (x - mbar) @ prec.T
    return logp, grad


@njit
def gmm_eval_grad_numba(x, means, prec, log_coef):
    n, d = x.shape
    k = means.shape[0]
    logp = np.empty(n)
    grad = np.empty((n, d))
    logits = np.empty(k)
    diff = np.empty(d)
    mbar = np.empty(d)
    for a in range(n):
        mx = -np.inf
        for i in range(k):
            for j in range(d):
                diff[j] = x[a, j] - means[i, j]
            q = 0.0
            for j in range(d):
                s = 0.0
                for m in range(d):
                    s += prec[j, m] * diff[m]
                q += diff[j] * s
            logits[i] = log_coef[i] - 0.5 * q
            if logits[i] > mx:
                mx = logits[i]
        tot = 0.0
        for i in range(k):
            logits[i] = np.exp(logits[i] - mx)
            tot += logits[i]
        logp[a] = mx + np.log(tot)
        for j in range(d):
            mbar[j] = 0.0
        for i in range(k):
            r = logits[i] / tot
            for j in range(d):
                mbar[j] += r * means[i, j]
        for j in range(d):
            s = 0.0
            for m in range(d):
                s += prec[j, m] * (x[a, m] - mbar[m])
            grad[a, j] = s
    return logp, grad


# ---------------------------------------------------------------------------
# Exhaustive conductance over all proper subsets of a small state space
# ---------------------------------------------------------------------------


def conductance_numpy(flow, pi, chunk=1 << 14):
    """Minimum normalized cut over all proper nonempty subsets.

    ``flow[x, y] = pi(x) P(x, y)`` off the diagonal, zero on it. Returns
    ``(phi, mask)`` where bit ``i`` of ``mask`` marks state ``i``.
    Only masks without the top state are visited; the ratio is symmetric
    under complement.
    """
    n = pi.shape[0]
    shifts = np.arange(n, dtype=np.int64)
    best, best_mask = np.inf, 0
    stop = 1 << (n - 1)
    for start in range(1, stop, chunk):
        masks = np.arange(start, min(start + chunk, stop), dtype=np.int64)
        member = ((masks[:, None] >> shifts[None, :]) & 1).astype(np.float64)
        mass = member @ pi
        cut = ((member @ flow) * (1.0 - member)).sum(axis=1)
        ratio = cut / np.minimum(mass, 1.0 - mass)
        j = int(np.argmin(ratio))
        if ratio[j] < best:
            best, best_mask = float(ratio[j]), int(masks[j])
    return best, best_mask


@njit
def _cut_exact(flow, pi, mask):
    n = pi.shape[0]
    mass = 0.0
    cut = 0.0
    for i in range(n):
        if (mask >> i) & 1:
            mass += pi[i]
            for j in range(n):
                if not (mask >> j) & 1:
                    cut += flow[i, j]
    return cut / min(mass, 1.0 - mass)


@njit
def conductance_numba(flow, pi):
    # Gray-code walk: consecutive masks differ in one state, so the cut and
    # the mass update in O(n); the winner is re-evaluated exactly at the end.
    n = pi.shape[0]
    row_tot = np.zeros(n)
    for i in range(n):
        for j in range(n):
            row_tot[i] += flow[i, j]
    row_in = np.zeros(n)  # sum over j in S of flow[i, j]
    col_in = np.zeros(n)  # sum over j in S of flow[j, i]
    member = np.zeros(n, dtype=np.bool_)
    cut = 0.0
    mass = 0.0
    best = np.inf
    best_mask = 0
    mask = 0
    stop = 1 << (n - 1)
    for k in range(1, stop):
        i = 0
        while not (k >> i) & 1:
            i += 1
        delta = row_tot[i] - row_in[i] - col_in[i]
        sign = -1.0 if member[i] else 1.0
        member[i] = not member[i]
        mask ^= 1 << i
        cut += sign * delta
        mass += sign * pi[i]
        for j in range(n):
            row_in[j] += sign * flow[j, i]
            col_in[j] += sign * flow[i, j]
        ratio = cut / min(mass, 1.0 - mass)
        if ratio < best:
            best = ratio
            best_mask = mask
    return _cut_exact(flow, pi, best_mask), best_mask


# ---------------------------------------------------------------------------
# Quasi-convexity search: BFS from every local minimum of an induced subgraph
# ---------------------------------------------------------------------------


def _bfs_numpy(nbr, source):
    n = nbr.shape[0]
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source])
    level = 0
    while frontier.size:
        level += 1
        cand = nbr[frontier].ravel()
        cand = cand[cand >= 0]
        cand = np.unique(cand[dist[cand] < 0])
        dist[cand] = level
        frontier = cand
    return dist


def quasiconvex_search_numpy(nbr, f):
    """Return ``(v_star, D)`` with the smallest radius, or ``(-1, -1)``.

    ``nbr[v, k]`` is the local index of the k-th in-subset neighbour of
    ``v`` or -1. The subgraph is assumed connected.
    """
    valid = nbr >= 0
    fn = np.where(valid, f[np.where(valid, nbr, 0)], np.inf)
    local_min = np.all(f[:, None] <= fn, axis=1)
    best_v, best_d = -1, -1
    for v in np.flatnonzero(local_min):
        dist = _bfs_numpy(nbr, v)
        dn = np.where(valid, dist[np.where(valid, nbr, 0)], -2)
        pred = dn == (dist[:, None] - 1)
        bad = pred & (fn > f[:, None])
        if bad.any():
            continue
        radius = int(dist.max())
        if best_d < 0 or radius < best_d:
            best_v, best_d = int(v), radius
    return best_v, best_d


@njit
def quasiconvex_search_numba(nbr, f):
    n, deg = nbr.shape
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    best_v = -1
    best_d = -1
    for v in range(n):
        is_min = True
        for k in range(deg):
            u = nbr[v, k]
            if u >= 0 and f[u] < f[v]:
                is_min = False
                break
        if not is_min:
            continue
        for i in range(n):
            dist[i] = -1
        dist[v] = 0
        queue[0] = v
        head = 0
        tail = 1
        while head < tail:
            a = queue[head]
            head += 1
            for k in range(deg):
                u = nbr[a, k]
                if u >= 0 and dist[u] < 0:
                    dist[u] = dist[a] + 1
                    queue[tail] = u
                    tail += 1
        ok = True
        radius = 0
        for a in range(n):
            if dist[a] > radius:
                radius = dist[a]
            for k in range(deg):
                u = nbr[a, k]
                if u >= 0 and dist[u] == dist[a] - 1 and f[u] > f[a]:
                    ok = False
                    break
            if not ok:
                break
        if ok and (best_d < 0 or radius < best_d):
            best_v = v
            best_d = radius
    return best_v, best_d


if USE_NUMBA:
    gmm_eval_grad = gmm_eval_grad_numba
    conductance_search = conductance_numba
    quasiconvex_search = quasiconvex_search_numba
else:
    gmm_eval_grad = gmm_eval_grad_numpy
    conductance_search = conductance_numpy
    quasiconvex_search = quasiconvex_search_numpy
