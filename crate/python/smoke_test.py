"""Smoke test for the portqubo_py extension module.

Build and install first, e.g.

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import itertools
import json
import math
import sys

import portqubo_py as pq


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    diag = pq.Instance(["A", "B", "C"], [1.0, 2.0, 3.0], [[1, 0, 0], [0, 2, 0], [0, 0, 3]], n=1)
    sol = diag.solve_exact()
    check(sol.x == [True, False, False] and sol.risk == 1.0, "exact solve of the diagonal example")

    inst = pq.Instance.synthetic(8, 2, seed=7, n=3, r_star=120.0, return_mode="at_least",
                                 integer_returns=True, loading_mean=1.0)
    again = pq.Instance.from_json(inst.to_json())
    check(again.mu == inst.mu and again.sigma == inst.sigma, "instance JSON round trip")

    l1, l2 = inst.estimate_lambdas()
    check(l1 > 0 and l2 > 0, f"penalty estimates lambda1={l1:.4g} lambda2={l2:.4g}")

    q = inst.build_qubo(lambda1=5.0, lambda2=0.5)
    k = int(math.floor(math.log2(sum(inst.mu))))
    check(q.dim == len(inst) + k and q.slack_weights == [2**i for i in range(k)], f"qubo dim {q.dim} = N + K")

    h, j, offset = q.to_ising()
    worst = 0.0
    for bits in itertools.islice(itertools.product([False, True], repeat=q.dim), 4096):
        spins = [1 if b else -1 for b in bits]
        worst = max(worst, abs(q.energy(list(bits)) - q.ising_energy(spins)))
    check(worst < 1e-9 * (1 + abs(offset)), "ising energies agree")
    check(q.chain_strength_bound() == sum(abs(v) for v in q.coefficients().values()), "chain-strength bound")
    check(pq.Qubo.from_text(q.to_text()).coefficients() == q.coefficients(), "qubo text round trip")

    oracle = inst.solve_exact()
    lam1, lam2, doublings, esc = inst.escalate()
    check(esc.x == oracle.x, f"escalation ({doublings} doublings) recovers the oracle subset")

    r1 = q.solve("sa", seed=3)
    r2 = q.solve("sa", seed=3)
    check(r1.bits == r2.bits and r1.trace == r2.trace, "seeded SA is reproducible")
    best = q.solve_restarts([0, 1, 2, 3], solver="tabu")
    check(abs(best.energy - q.energy(best.bits)) < 1e-9 * (1 + abs(best.energy)), "tabu energy matches")

    decoded = inst.decode(q, best.bits)
    check(decoded.x == best.bits[: len(inst)], "decode keeps the asset prefix")

    plan = {
        "instances": [{"synthetic": {"n_assets": 8, "n_factors": 2, "idiosyncratic_floor": 1.0,
                                     "return_range": [0.0, 10.0], "seed": 2},
                       "n": 3, "return_mode": "none"}],
        "solvers": ["sa", "tabu"],
        "seeds": [0, 1],
    }
    csv = pq.run_bench(json.dumps(plan), no_timing=True)
    check(csv == pq.run_bench(json.dumps(plan), no_timing=True), "bench CSV deterministic")
    check(len(csv.strip().splitlines()) == 1 + 2 * 2 + 1, "bench row count")

    try:
        pq.Instance.synthetic(4, 1, seed=0, n=9)
    except pq.PortquboError:
        check(True, "invalid instance raises PortquboError")
    else:
        check(False, "invalid instance raises PortquboError")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
