"""Smoke test for the clockwork extension module.

Build and install first, e.g.

    cd crates/py && maturin build --release -o ../../dist && pip install ../../dist/clockwork-*.whl
"""

import json
import math

import clockwork as cw


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    cycle = cw.Mdp.reference("two_cycle")
    assert cycle.is_communicating()
    assert cycle.certificate() == (2, 1.0)
    assert cycle.visit_rate_bound(1.0) == 0.5
    assert all(close(q, 10.0, 1e-6) for row in cycle.solve_q() for q in row)

    single = cw.Mdp([[[1.0]]], [[[1.0]]], 0.5)
    assert close(single.solve_q(1e-12)[0][0], 2.0, 1e-10)
    assert single.validate() == []

    broken = cw.Mdp([[[0.4, 0.5]], [[0.0, 1.0]]], [[[0.0, 0.0]], [[0.0, 0.0]]], 0.9)
    assert broken.validate() == ["row (x=0,a=0) sums to 0.9"]

    assert not cw.Mdp.reference("absorbing").is_communicating()

    ref4 = cw.Mdp.reference("reference4")
    again = cw.Mdp.from_json(ref4.to_json())
    assert again.kernel() == ref4.kernel() and again.reward() == ref4.reward()
    uniform = [[0.5, 0.5]] * ref4.num_states
    report = ref4.lemma1_check(uniform, 0.5, [1.0, 0.0, 2.0, 0.5])
    assert report["passed"], report

    pp = cw.Schedule.power_product(0.4, 0.4)
    assert pp.theorem2_admissible()
    assert pp.verdict() == (True, True)
    assert not cw.Schedule.global_clock(0.4).theorem2_admissible()
    try:
        cw.Schedule.local_pair_clock(0.7).theorem2_admissible()
    except ValueError:
        pass
    else:
        raise AssertionError("pair clock should not be covered")
    assert close(cw.Schedule.local_pair_clock(1.0, b=0.0).rate(5, 3, 2), 0.5, 1e-15)
    assert json.loads(pp.to_json())["kind"] == "power_product"

    probs = cw.Policy.eps_greedy(0.2).distribution([[1.0, 0.0, 0.0]], 0)
    assert all(close(p, e, 1e-12) for p, e in zip(probs, [0.2 / 3 + 0.8, 0.2 / 3, 0.2 / 3]))

    horizon = 10_000
    result = cw.run(single, cw.Policy.uniform(), cw.Schedule.local_pair_clock(1.0, b=0.0), horizon, seed=1)
    scalar = 0.0
    for j in range(1, horizon + 1):
        scalar = (1 - 1 / j) * scalar + (1 / j) * (1 + 0.5 * scalar)
    assert close(result["final_q"][0][0], scalar, 1e-12)
    assert result["checkpoints"][-1][0] == horizon
    assert close(sum(result["visit_frequencies"]), (horizon + 1) / horizon, 1e-12)
    print("single-state error after 1e4 steps:", abs(result["final_q"][0][0] - 2.0))

    rep = cw.verify(ref4, cw.Policy.uniform(), cw.Schedule.local_pair_clock(0.7), 20_000,
                    seeds=4, checks=["visit_bound"])
    assert rep["passed"] and rep["certified"], rep["text"]
    assert rep["csv"].startswith("check,seed,value,threshold,passed\n")

    explore = cw.verify(ref4, cw.Policy.uniform(), cw.Schedule.global_clock(0.4), 2_000,
                        seeds=2, checks=["rm_series"], exploratory=True)
    assert "exploratory: not certified" in explore["text"]
    assert not math.isnan(result["max_q_norm"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
