"""Smoke test for the `rishm` Python extension.

Build and install the module first, e.g. `maturin develop -m crates/py/Cargo.toml`,
or build with `cargo build --release -p rishm-py --features extension-module`
and copy `target/release/librishm.so` to `rishm.so` on the Python path.
"""

import sys
import time

import rishm


def main() -> int:
    inst = rishm.Instance.generate(7, "small")
    print(inst)
    assert (inst.num_sites, inst.num_targets, inst.k) == (25, 300, 10)

    sol = rishm.Solution.random(inst.num_sites, inst.k, seed=0)
    fitness, coverage = inst.evaluate(sol)
    print(f"random deployment: fitness {fitness:.3f}, coverage {coverage:.3f}")

    budget = 2 * inst.dimension + 100
    results = {}
    for variant in ("random_search", "ga_only"):
        start = time.perf_counter()
        res = rishm.run(inst, variant, seed=1, max_fes=budget)
        elapsed = time.perf_counter() - start
        assert res.evaluations == budget
        trace = [best for _, best in res.trace]
        assert all(a >= b for a, b in zip(trace, trace[1:])), "trace must not increase"
        results[variant] = res.best_fitness
        print(f"{variant:>14}: best {res.best_fitness:.3f} coverage {res.coverage:.3f} ({elapsed:.1f}s)")

    assert abs(rishm.mu_distance(25.0) - 0.5) < 1e-12
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
