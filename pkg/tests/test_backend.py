"""The numba kernels and the pure-numpy fallbacks implement one contract."""
import os
import subprocess
import sys

import numpy as np
import pytest

from meta3 import _kernels_numba as kb
from meta3 import _kernels_numpy as kp


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(1234)


def test_jacobi_parity(rng):
    s = rng.standard_normal((12, 12))
    s = s + s.T
    w1, v1, off1, _ = kb.jacobi_eigh(s.copy(), 100, 1e-12)
    w2, v2, off2, _ = kp.jacobi_eigh(s.copy(), 100, 1e-12)
    assert np.allclose(np.sort(w1), np.sort(w2), atol=1e-12)
    fro = np.linalg.norm(s)
    assert off1 <= 1e-12 * fro and off2 <= 1e-12 * fro


def test_block_eig_parity(rng):
    blocks = rng.standard_normal((4, 5, 5))
    blocks = blocks + blocks.transpose(0, 2, 1)
    roots = 0.2 + rng.random((4, 5))
    va, wa = kb.scaled_block_eigvals(blocks, roots, 100, 1e-12)
    vb, wb = kp.scaled_block_eigvals(blocks, roots, 100, 1e-12)
    assert np.allclose(np.sort(va), np.sort(vb), atol=1e-12)
    assert wa <= 1e-12 and wb <= 1e-12


def test_davies_sum_parity(rng):
    lams = np.abs(rng.standard_normal(9)) + 0.05
    for q in (0.5, 3.0, 11.0):
        a = kb.davies_sum(q, lams, 0.01, 4000, 1e-6)
        b = kp.davies_sum(q, lams, 0.01, 4000, 1e-6)
        assert a == pytest.approx(b, abs=1e-10)


def test_chernoff_and_cutoff_parity(rng):
    lams = np.abs(rng.standard_normal(7)) + 0.1
    for x in (1.0, 5.0, 25.0):
        assert kb.chernoff_bound(lams, x, True) == pytest.approx(
            kp.chernoff_bound(lams, x, True), abs=1e-13)
    for x in (0.05, 0.4):
        assert kb.chernoff_bound(lams, x, False) == pytest.approx(
            kp.chernoff_bound(lams, x, False), abs=1e-13)
    for eps in (1e-4, 1e-7):
        assert kb.tail_cutoff(lams, eps, True) == pytest.approx(
            kp.tail_cutoff(lams, eps, True), rel=1e-9)
        assert kb.tail_cutoff(lams, eps, False) == pytest.approx(
            kp.tail_cutoff(lams, eps, False), rel=1e-9, abs=1e-12)


def test_reml_core_parity(rng):
    t = rng.standard_normal(24)
    v2 = 0.05 + 0.2 * rng.random(24)
    x = np.ones((24, 1))
    starts = np.arange(0, 25, 4, dtype=np.int64)
    for tau2, omega2 in [(0.0, 0.0), (0.2, 0.1), (1.5, 0.7)]:
        a = kb.reml_loglik_core(tau2, omega2, t, v2, x, starts)
        b = kp.reml_loglik_core(tau2, omega2, t, v2, x, starts)
        assert a == pytest.approx(b, abs=1e-10)
    pa = kb.profile_loglik(0, 0.2, 4.0, t, v2, x, starts, 1e-8)
    pb = kp.profile_loglik(0, 0.2, 4.0, t, v2, x, starts, 1e-8)
    assert pa[0] == pytest.approx(pb[0], abs=1e-8)
    assert pa[1] == pytest.approx(pb[1], abs=1e-6)


def test_env_flag_selects_numpy_backend():
    code = (
        "import meta3, numpy as np\n"
        "assert meta3.backend.backend_name() == 'numpy'\n"
        "from meta3 import qform\n"
        "r = qform.davies_cdf(3.841458820694124, qform.QFormSpec(np.array([1.0])))\n"
        "assert abs(r.prob - 0.95) < 1e-4, r\n"
        "print('ok')\n"
    )
    env = dict(os.environ, META3_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"


def test_default_backend_is_numba():
    from meta3 import backend

    if os.environ.get("META3_BACKEND", "numba") == "numba":
        assert backend.backend_name() == "numba"
