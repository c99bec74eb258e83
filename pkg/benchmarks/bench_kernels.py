"""Time the numba kernels against their numpy twins.

Run ``python3 benchmarks/bench_kernels.py``. Each row reports the median
wall time over ``--repeat`` calls (after one warm-up call that triggers
compilation) and the largest disagreement between the two outputs.
"""

import argparse
import statistics
import time

import numpy as np

from condmix import _kernels
from condmix.config import preset_target
from condmix.hypercube import build_lazy_gibbs, EnergyFunction, _induced_neighbours


def _time(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_gmm(n, repeat):
    target = preset_target("nu2")
    x = np.random.default_rng(0).uniform(-15, 15, (n, 1))
    args = (x, target.means, target.precision, target._log_coef)
    a = _kernels.gmm_eval_grad_numba(*args)
    b = _kernels.gmm_eval_grad_numpy(*args)
    err = max(np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1])))
    return (
        f"gmm_eval_grad (nu2, n={n})",
        _time(lambda: _kernels.gmm_eval_grad_numba(*args), repeat),
        _time(lambda: _kernels.gmm_eval_grad_numpy(*args), repeat),
        err,
    )


def bench_conductance(d, repeat):
    rng = np.random.default_rng(1)
    chain = build_lazy_gibbs(EnergyFunction(d, rng.integers(0, 5, 1 << d).astype(float)))
    flow = chain.stationary[:, None] * chain.dense()
    np.fill_diagonal(flow, 0.0)
    pi = chain.stationary
    a = _kernels.conductance_numba(flow, pi)[0]
    b = _kernels.conductance_numpy(flow, pi)[0]
    return (
        f"conductance ({1 << d} states)",
        _time(lambda: _kernels.conductance_numba(flow, pi), repeat),
        _time(lambda: _kernels.conductance_numpy(flow, pi), repeat),
        abs(a - b),
    )


def bench_quasiconvex(d, repeat):
    c = np.linspace(1.0, 2.0, d)
    bits = (np.arange(1 << d)[:, None] >> np.arange(d)[None, :]) & 1
    f = (bits @ c).astype(float)
    _, nbr = _induced_neighbours(d, np.ones(1 << d, dtype=bool))
    a = _kernels.quasiconvex_search_numba(nbr, f)
    b = _kernels.quasiconvex_search_numpy(nbr, f)
    return (
        f"quasiconvex_search (d={d})",
        _time(lambda: _kernels.quasiconvex_search_numba(nbr, f), repeat),
        _time(lambda: _kernels.quasiconvex_search_numpy(nbr, f), repeat),
        float(a != b),
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--particles", type=int, default=100_000)
    parser.add_argument("--states-d", type=int, default=4, help="cube dimension for conductance (2**d states)")
    parser.add_argument("--qc-d", type=int, default=10)
    args = parser.parse_args(argv)

    rows = [
        bench_gmm(args.particles, args.repeat),
        bench_conductance(args.states_d, args.repeat),
        bench_quasiconvex(args.qc_d, args.repeat),
    ]
    print(f"{'kernel':34s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, tn, tp, err in rows:
        print(f"{name:34s} {tn * 1e3:11.3f} {tp * 1e3:11.3f} {tp / tn:8.1f} {err:10.2e}")


if __name__ == "__main__":
    main()
