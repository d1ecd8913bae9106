"""Smoke test for the maxva extension module.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""

import math

import maxva


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def check_beta_rule():
    bounds = maxva.BetaBounds(lower=0.5, upper=0.999, beta_one=0.9)
    st = maxva.MaxVAState(2)
    beta, st = maxva.maxva_step_beta(st, [1.0, -2.0], bounds)
    assert beta == [0.9, 0.9]
    assert st.t == 1
    u, v, s2 = st.bias_corrected()
    assert close(u[0], 1.0) and close(v[1], 4.0) and s2 == [0.0, 0.0]

    # second step with a fresh gradient: raw β is 1/(2 - β₁) when σ² = 0
    raw = maxva.compute_beta_raw([3.0, 5.0], st, 0.0)
    assert all(close(b, 1.0 / (2.0 - 0.9)) for b in raw), raw
    clipped = maxva.clip_beta([0.1, 0.7, 1.5], bounds)
    assert clipped == [0.5, 0.7, 0.999]

    manual = maxva.update_moments(st, [3.0, 5.0], maxva.clip_beta(raw, bounds))
    _, via_step = maxva.maxva_step_beta(st, [3.0, 5.0], bounds)
    assert manual.w == via_step.w and manual.u_tilde == via_step.u_tilde


def check_optimizers():
    assert set(maxva.ALGORITHMS) >= {"madam", "lamadam", "adam", "amsgrad", "laprop", "adabound", "sgd"}
    for name in maxva.ALGORITHMS:
        opt = maxva.Optimizer(name, 0.05)
        theta = [1.0, -1.0]
        for _ in range(500):
            theta = opt.step(theta, [2.0 * x for x in theta])
        assert opt.t == 500
        assert sum(x * x for x in theta) < 1e-2, (name, theta)
        if name in ("madam", "lamadam"):
            assert all(0.5 <= b <= 0.999 for b in opt.last_beta)
    try:
        maxva.Optimizer("rmsprop")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown algorithm accepted")


def check_problems():
    grads = [maxva.finite_sample_grad(0.5, i) for i in range(1, 12)]
    assert close(sum(grads), maxva.finite_sample_full_grad(0.5))
    assert maxva.finite_sample_loss(0.0) <= maxva.finite_sample_loss(0.5)
    g = maxva.nqm_grad([1.0, 2.0], [1.0, 0.1], 1.0, [0.5, -1.0])
    assert close(g[0], 0.5) and close(g[1], 0.3)
    excess, expected = maxva.nqm_risk([1.0, 2.0], [1.0, 0.1], 1.0)
    assert close(excess, 0.5 + 0.2) and expected > excess


def check_experiment():
    opt = maxva.Optimizer("madam", 1.2, alpha=0.0, bounds=maxva.BetaBounds(0.5, 1.0))
    res = maxva.run_experiment("counterexample", opt, runs=4, steps=2000, seed=0, record_every=100)
    assert res["step"][-1] == 2000 and len(res["median_loss"]) == 20
    assert all(a <= b for a, b in zip(res["median_s1"], res["median_s1"][1:]))
    again = maxva.run_experiment("counterexample", opt, runs=4, steps=2000, seed=0, record_every=100)
    assert again["final_losses"] == res["final_losses"]

    adam = maxva.Optimizer("adam", 0.01)
    nqm = maxva.run_experiment("nqm", adam, runs=8, steps=200, h=[1.0, 0.1], sigma=0.0)
    assert all(math.isfinite(x) for x in nqm["final_losses"])
    assert nqm["failed_runs"] == 0


if __name__ == "__main__":
    check_beta_rule()
    check_optimizers()
    check_problems()
    check_experiment()
    print("smoke test passed")
