"""Smoke test for the nbm extension.

Build and install it first:

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import nbm

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def bs_call(s, k, r, sigma, t):
    cdf = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    sd = sigma * math.sqrt(t)
    d1 = (math.log(s / k) + (r + 0.5 * sigma * sigma) * t) / sd
    return s * cdf(d1) - k * math.exp(-r * t) * cdf(d1 - sd)


def drivers():
    d = nbm.Driver.quadratic(2.0, 1.0)
    close(d(0.0, 0.0, 1.0), 0.0, 1e-15)
    again = nbm.Driver.from_json(d.to_json())
    assert again.kind == d.kind
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.json")
        d.save(path)
        assert nbm.Driver.load(path).to_json() == d.to_json()
    try:
        nbm.Driver.quadratic(-1.0, 1.0)
    except nbm.NbmError:
        pass
    else:
        raise AssertionError("negative alpha accepted")


def volatility():
    vf = nbm.VolatilityField(nbm.Driver.quadratic(2.0, 1.0))
    close(vf.nu(0.3, 0.7), 1.0, 1e-10)
    close(vf.constant_value, 1.0, 1e-10)
    cubic = nbm.VolatilityField(nbm.Driver.from_roots([0.5, 1.5, 3.0]), select=True)
    rs = cubic.roots(0.0, 0.0)
    for got, want in zip(rs["roots"], [0.5, 1.5, 3.0]):
        close(got, want, 1e-8)
    close(cubic.nu(0.0, 0.0), rs["roots"][rs["selected_index"]], 1e-12)


def simulation():
    vf = nbm.VolatilityField(nbm.Driver.quadratic(2.0, 1.0))
    paths = nbm.simulate(vf, 1.0, 50, 20000, 7)
    assert paths.n_paths == 20000 and len(paths.times) == 51
    x = paths.terminal()
    mean = sum(x) / len(x)
    var = sum((v - mean) ** 2 for v in x) / (len(x) - 1)
    close(mean, 0.0, 4.0 * math.sqrt(1.0 / len(x)))
    close(var, 1.0, 0.05)
    assert nbm.simulate(vf, 1.0, 50, 100, 7).path(3) == nbm.simulate(vf, 1.0, 50, 100, 7).path(3)

    for reweight in (False, True):
        m, se = nbm.simulate_shifted(vf, 1.0, 50, 100000, 11, reweight=reweight).terminal_mean()
        close(m, 2.0, max(4.0 * se, 0.06))

    rep = nbm.verify_martingale(nbm.Driver.quadratic(2.0, 1.0), 1.0, 50, 20000, 3)
    assert max(rep["mean_abs_err"]) < 0.05, rep


def pricing():
    vf = nbm.VolatilityField(nbm.Driver.proportional(0.2))
    p = nbm.price(vf, "call", strike=100.0, maturity=1.0, s0=100.0, r=0.05)
    exact = bs_call(100.0, 100.0, 0.05, 0.2, 1.0)
    close(p, exact, 1e-3 * exact)

    quotes = nbm.read_quotes(os.path.join(ROOT, "configs", "quotes_nu20.csv"))
    truth = nbm.VolatilityField(nbm.Driver.load(os.path.join(ROOT, "configs", "drivers", "quadratic_nu20.json")))
    model = nbm.price_quotes(truth, quotes, 100.0, 0.02)
    for q, m in zip(quotes, model):
        close(m, q[3], 1e-9 * max(1.0, q[3]))

    fit = nbm.calibrate(quotes, 100.0, 0.02, nbm.Driver.quadratic(1.0, 150.0), free=[1])
    nu = nbm.VolatilityField(fit["driver"]).constant_value
    close(nu, 20.0, 0.02)
    assert fit["loss"] < 1e-8


def meanfield():
    d = nbm.Driver.load(os.path.join(ROOT, "configs", "drivers", "linear_meanfield.json"))
    out = nbm.mkv_pde(d, 0.0, 1.0, 0.5, n_steps=100, n_x=401)
    dx = out["x"][1] - out["x"][0]
    for row in (out["density"][0], out["density"][-1]):
        close(sum(row) * dx, 1.0, 1e-3)
    a = [i / 100.0 for i in range(100)]
    close(nbm.w2_distance(a, [v + 0.25 for v in a]), 0.25, 1e-12)


if __name__ == "__main__":
    for check in (drivers, volatility, simulation, pricing, meanfield):
        check()
        print(f"ok  {check.__name__}")
