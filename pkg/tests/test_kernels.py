import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condmix import _kernels
from condmix.config import preset_target
from condmix.hypercube import EnergyFunction, _induced_neighbours, build_lazy_gibbs, grow_connected_subset
from condmix.potentials import GaussianMixtureTarget


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 5))
def test_gmm_backends_agree(seed, d, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    t = GaussianMixtureTarget(rng.dirichlet(np.ones(k)), rng.uniform(-6, 6, (k, d)), A @ A.T + 0.3 * np.eye(d))
    x = rng.uniform(-30, 30, (200, d))
    args = (x, t.means, t.precision, t._log_coef)
    va, ga = _kernels.gmm_eval_grad_numba(*args)
    vb, gb = _kernels.gmm_eval_grad_numpy(*args)
    np.testing.assert_allclose(va, vb, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-9)


def flow_of(chain):
    F = chain.stationary[:, None] * chain.dense()
    np.fill_diagonal(F, 0.0)
    return np.ascontiguousarray(F), np.ascontiguousarray(chain.stationary)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_conductance_backends_agree(seed, d):
    rng = np.random.default_rng(seed)
    F, pi = flow_of(build_lazy_gibbs(EnergyFunction(d, rng.integers(0, 8, 1 << d).astype(float))))
    a = _kernels.conductance_numba(F, pi)[0]
    b = _kernels.conductance_numpy(F, pi)[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_conductance_numpy_chunking_is_invisible():
    rng = np.random.default_rng(0)
    F, pi = flow_of(build_lazy_gibbs(EnergyFunction(4, rng.integers(0, 8, 16).astype(float))))
    assert _kernels.conductance_numpy(F, pi, chunk=7)[0] == _kernels.conductance_numpy(F, pi)[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_quasiconvex_backends_agree(seed, d):
    rng = np.random.default_rng(seed)
    mask = grow_connected_subset(d, int(rng.integers(1, (1 << d) + 1)), rng)
    f = rng.integers(0, 4, 1 << d).astype(float)
    keep, nbr = _induced_neighbours(d, mask)
    assert _kernels.quasiconvex_search_numba(nbr, f[keep]) == _kernels.quasiconvex_search_numpy(nbr, f[keep])


def test_numpy_backend_selected_by_env():
    script = (
        "import numpy as np\n"
        "from condmix._accel import backend_name\n"
        "from condmix.config import preset_target\n"
        "from condmix.hypercube import build_lazy_gibbs, conductance, two_well_energy\n"
        "t = preset_target('nu2')\n"
        "x = np.linspace(-9, 9, 7)[:, None]\n"
        "v, g = t.value(x), t.grad(x)\n"
        "print(backend_name(), repr(float(v.sum())), repr(float(g.sum())),"
        " repr(conductance(build_lazy_gibbs(two_well_energy(3)))))\n"
    )
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CONDMIX_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        out[flag] = res.stdout.split()
    assert out["0"][0] == "numpy" and out["1"][0] == "numba"
    for a, b in zip(out["0"][1:], out["1"][1:]):
        assert float(a) == pytest.approx(float(b), rel=1e-12)


def test_preset_eval_uses_dispatcher():
    t = preset_target("nu3")
    x = np.random.default_rng(1).normal(size=(50, 2)) * 4
    v, g = t.value(x), t.grad(x)
    logp, gb = _kernels.gmm_eval_grad_numpy(x, t.means, t.precision, t._log_coef)
    np.testing.assert_allclose(v, -logp, rtol=1e-12)
    np.testing.assert_allclose(g, gb, rtol=1e-10, atol=1e-12)
