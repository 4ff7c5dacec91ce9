"""Smoke test for the grnlab extension module.

Build first:  cargo build --release -p grnlab-python
Then run:     python3 python/smoke_test.py

The script loads target/release/libgrnlab.so (or an importable ``grnlab`` if one is installed).
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    built = ROOT / "target" / "release" / "libgrnlab.so"
    if not built.exists():
        import grnlab

        return grnlab
    staging = pathlib.Path(tempfile.mkdtemp()) / "grnlab.so"
    shutil.copy(built, staging)
    spec = importlib.util.spec_from_file_location("grnlab", staging)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    g = load()
    targets = g.standard_targets()
    assert len(targets) == 2 and all(len(t) == 10 for t in targets)

    bound = g.upper_bound()
    assert abs(bound["bound"] - 0.9462) < 1e-4, bound
    assert bound["unrecoverable"][3:] == [10, 55, 126, 155, 110, 45, 10, 1]

    opt = g.Grn.optimal()
    assert g.Grn.from_compact(opt.to_compact()) == opt
    fit = g.distributional_fitness(opt, targets)
    assert abs(fit - bound["bound"]) < 1e-9, fit
    assert 0.3 < g.q_score(opt) <= 0.5
    sampled = g.stochastic_fitness(opt, targets, samples=2000, seed=1)
    assert abs(sampled - fit) < 0.02, sampled

    zero = g.Grn.zeros(10)
    start = [1] * 10
    assert g.step(zero, start) == [-1] * 10
    assert g.regulate(zero, start, start) == start
    assert g.recover(zero, start, start, rule="settle") == [-1] * 10
    assert abs(g.distributional_fitness(zero, [targets[0]]) - 0.08949) < 1e-4

    m = g.mann_whitney_u([1, 2, 3], [10, 11, 12])
    assert m["u_x"] == 0 and m["p"] < 0.1

    try:
        g.Grn([[2]])
    except ValueError:
        pass
    else:
        raise AssertionError("weight 2 accepted")

    run = g.evolve(generations=40, phase2_start=10, population_size=20, qnorm_samples=50, seed=3)
    assert len(run["best_fitness"]) == 40
    assert all(0.0 <= f <= bound["bound"] + 1e-12 for f in run["best_fitness"])
    assert isinstance(run["best"], g.Grn)
    assert not any(math.isnan(e) for e in run["mean_edges"])
    again = g.evolve(generations=40, phase2_start=10, population_size=20, qnorm_samples=50, seed=3)
    assert again["best_fitness"] == run["best_fitness"]

    print(f"smoke test passed: bound {bound['bound']:.6f}, optimum {opt!r}, evolved best {run['best_fitness'][-1]:.4f}")


if __name__ == "__main__":
    sys.exit(main())
