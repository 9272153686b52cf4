"""Smoke test for the compiled extension.

Build it first:

    cargo build -p lclogit-python --features extension-module
    cp target/debug/liblclogit_py.so python/lclogit_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import lclogit_py as lc

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

ONE_TRADER = """
name = "one-trader"

[[class]]
name = "traders"
kind = "trader"
base = true
terms = [
  { constant = true, value = 0.4 },
  { attribute = "time_horizon", transform = "linear", value = -0.6 },
  { attribute = "levy", transform = "linear", value = -1.2 },
]
"""


def main():
    codes = lc.orthogonal_poly_codes([1.0, 2.0, 4.0], 2)
    for j in range(2):
        assert abs(sum(row[j] for row in codes)) < 1e-12
        assert abs(sum(row[j] ** 2 for row in codes) - 1.0) < 1e-12

    assert abs(lc.annuity_factor(0.03, 50) - 25.7298) < 1e-4

    shares = {"a": 0.25, "b": 0.75}
    assert lc.household_average_wtp(shares, {"a": 20.0, "b": 100.0}) == 80.0
    assert lc.household_average_wtp(shares, {"a": 20.0, "b": None}) == 5.0

    design = lc.generate_design(42)
    assert len(design["tasks"]) == 48
    assert {t[1] for t in design["tasks"]} == set(range(1, 9))

    with tempfile.TemporaryDirectory() as tmp:
        spec = os.path.join(tmp, "one.spec")
        with open(spec, "w") as f:
            f.write(ONE_TRADER)
        out = lc.simulate(spec, 400, 3, os.path.join(tmp, "data"))
        assert out["n_observations"] == 2400
        obs = os.path.join(tmp, "data", "observations.csv")
        resp = os.path.join(tmp, "data", "respondents.csv")
        at_truth = lc.log_likelihood(obs, resp, spec)
        result = lc.fit(obs, resp, spec, starts=2, seed=1)
        assert result["converged"]
        assert result["log_likelihood"] >= at_truth - 1e-9
        zeros = {name: 0.0 for name in result["params"]}
        at_zero = lc.log_likelihood(obs, resp, spec, zeros)
        assert abs(at_zero + 2400 * math.log(2)) < 1e-6
        assert set(result["params"]) == set(result["std_errors"])

    try:
        lc.orthogonal_poly_codes([1.0, 1.0], 1)
    except ValueError:
        pass
    else:
        raise AssertionError("repeated levels were accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
