from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from cfdbal._backend import BACKEND, get_backend

py = get_backend("python")
try:
    compiled = get_backend("compiled")
except ImportError:  # extension not built
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_active_backend_name():
    assert BACKEND in ("compiled", "python")
    assert py.BACKEND == "python"


@pytest.mark.parametrize("name,metric", [("cross_sqeuclidean", "sqeuclidean"),
                                         ("cross_cityblock", "cityblock")])
def test_python_cross_distances(name, metric, rng):
    X, Y = rng.normal(size=(13, 4)), rng.normal(size=(7, 4))
    assert np.allclose(getattr(py, name)(X, Y), cdist(X, Y, metric), atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("name", ["cross_sqeuclidean", "cross_cityblock"])
def test_cross_agree(name, rng):
    X, Y = rng.normal(size=(31, 5)), rng.normal(size=(17, 5))
    assert np.allclose(getattr(compiled, name)(X, Y), getattr(py, name)(X, Y), atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("name", ["pairwise_sqeuclidean", "pairwise_cityblock"])
def test_pairwise_agree(name, rng):
    X = rng.normal(size=(40, 3))
    a, b = getattr(compiled, name)(X), getattr(py, name)(X)
    assert np.allclose(a, b, atol=1e-12)
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)


def _admm_state(rng, n=12, m=2):
    P = rng.normal(size=(n, n))
    P = P @ P.T / n
    A = np.zeros((m, n))
    A[0, : n // 2] = 1
    A[1, n // 2:] = 1
    sigma, ra, rb = 1e-6, 10.0, 0.1
    M = P + (sigma + rb) * np.eye(n) + ra * A.T @ A
    args = dict(Minv=np.linalg.inv(M), A=A, q=rng.normal(size=n), lA=np.full(m, 6.0),
                uA=np.full(m, 6.0), lB=np.zeros(n), uB=np.full(n, np.inf),
                rho_a=ra, rho_b=rb, sigma=sigma, alpha=1.6)
    state = dict(x=np.zeros(n), zA=np.zeros(m), zB=np.zeros(n), yA=np.zeros(m),
                 yB=np.zeros(n), dyA=np.zeros(m), dyB=np.zeros(n))
    return args, state


@needs_compiled
def test_admm_iterations_agree(rng):
    args, s1 = _admm_state(rng)
    s2 = {k: v.copy() for k, v in s1.items()}
    compiled.admm_run(**args, **s1, n_iter=200)
    py.admm_run(**args, **s2, n_iter=200)
    for k in s1:
        assert np.allclose(s1[k], s2[k], rtol=1e-9, atol=1e-11), k


_SCRIPT = """
import json, numpy as np
from cfdbal import balance_weights, BACKEND
r = np.random.default_rng(5)
X = r.normal(size=(60, 3)); z = (r.random(60) < .4).astype(float); z[:2] = [1, 0]
print(json.dumps({"backend": BACKEND, "w": balance_weights(X, z).w.tolist()}))
"""


def _run(backend):
    env = dict(os.environ, CFDBAL_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout)


@needs_compiled
def test_balance_same_under_both_backends():
    a, b = _run("compiled"), _run("python")
    assert (a["backend"], b["backend"]) == ("compiled", "python")
    assert np.max(np.abs(np.array(a["w"]) - np.array(b["w"]))) <= 1e-8
