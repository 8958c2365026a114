import os
import subprocess
import sys

import numpy as np
import pytest

from xbarmap import _relax_py, kernels

from .oracles import dense_crossbar_currents


def batch(rng, b, rows, cols):
    v = rng.uniform(0, 0.5, (b, rows))
    g = 1.0 / rng.uniform(2e4, 2e5, (b, rows, cols))
    return v, g / (1 + g * 1e3)


def test_fallback_matches_oracle(rng):
    v, gc = batch(rng, 3, 5, 4)
    _, vs, iters = _relax_py.relax_solve(v, gc, 0.5, 1e-13, 20000)
    assert np.all(iters > 0)
    for k in range(3):
        # gc already includes the access resistance
        ref = dense_crossbar_currents(v[k], gc[k], 2.0, 0.0)
        np.testing.assert_allclose(0.5 * vs[k, -1], ref, rtol=1e-10)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
def test_compiled_matches_fallback(rng):
    from xbarmap import _relax

    v, gc = batch(rng, 4, 16, 12)
    fast = _relax.relax_solve(v, gc, 0.5, 1e-13, 20000)
    slow = _relax_py.relax_solve(v, gc, 0.5, 1e-13, 20000)
    np.testing.assert_allclose(fast[1], slow[1], rtol=1e-11, atol=0)
    np.testing.assert_allclose(fast[0], slow[0], rtol=1e-11, atol=0)


def test_non_convergence_flagged(rng):
    v, gc = batch(rng, 2, 16, 16)
    _, _, iters = kernels.relax_solve(v, gc, 0.5, 1e-16, 1)
    assert np.all(iters == -1)


def test_env_forces_fallback():
    env = {**os.environ, "XBARMAP_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from xbarmap import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
