"""Smoke test for the Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import math

import wassoed_py as w


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    a = w.Measure.gaussian([0.0], [[1.0]])
    b = w.Measure.gaussian([1.0], [[4.0]])
    close(w.wasserstein_distance(a, b, 2.0), math.sqrt(2.0), 1e-12)

    t = w.TransportMap1D(a, b)
    close(t(0.5), 2.0, 1e-8)
    close(t.cost(), 2.0, 1e-8)

    x = w.Measure.empirical([[0.0, 0.0]])
    y = w.Measure.empirical([[3.0, 4.0]])
    dist, plan = w.discrete_plan(x, y, 2.0)
    close(dist, 5.0, 1e-12)
    assert plan == [(0, 0, 1.0)]

    m = w.LinearGaussianModel([[1.0]], [[1.0]], [0.0], [[1.0]])
    close(m.u2().value, 2.0 - 2.0 * math.sqrt(0.5), 1e-12)
    close(m.u2_eigen().value, m.u2().value, 1e-12)
    close(m.eig().value, 0.5 * math.log(2.0), 1e-12)

    exact = w.linear1d_u1(0.8)
    atoms = w.Measure.gaussian([0.0], [[1.0]]).sample(2000, 7)
    approx = w.linear1d_u1_empirical(atoms, 0.8)
    assert approx.estimator == "empirical-prior"
    assert abs(exact.value - approx.value) < 0.1 * exact.value, (exact, approx)
    close(w.linear1d_u1(0.0).value, 0.0, 1e-12)

    try:
        w.Measure.gaussian([0.0], [[-1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("negative variance accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
