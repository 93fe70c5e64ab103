"""Smoke test for the pysetloss extension.

Build first with `cargo build -p setloss-py` (add `--release` for speed),
then run `python3 crates/python/python/smoke_test.py`. The script loads
libpysetloss.so from target/ under the name the module expects.
"""

import importlib.util
import math
import random
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load():
    candidates = [ROOT / "target" / p / "libpysetloss.so" for p in ("release", "debug")]
    built = [c for c in candidates if c.exists()]
    if not built:
        sys.exit("libpysetloss.so not found; run `cargo build -p setloss-py` first")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    tmp = Path(tempfile.mkdtemp()) / "pysetloss.so"
    shutil.copy(newest, tmp)
    spec = importlib.util.spec_from_file_location("pysetloss", tmp)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def cross_entropy(x, y, eps):
    total = 0.0
    for a, b in zip(x, y):
        p = min(max(b, eps), 1 - eps)
        q = min(max(1 - b, eps), 1 - eps)
        total -= a * math.log(p) + (1 - a) * math.log(q)
    return total


def sce(target, output, eps):
    return -sum(math.log(sum(math.exp(-cross_entropy(x, y, eps)) for y in output)) for x in target)


def main():
    sl = load()
    eps = sl.DEFAULT_EPSILON

    x = [[0.0, 1.0], [0.0, 0.0]]
    assert abs(math.exp(-sl.set_cross_entropy(x, [[0.1, 0.5], [0.1, 0.5]])) - 0.81) < 1e-6
    assert abs(math.exp(-sl.set_cross_entropy(x, [[0.1, 0.5], [0.9, 0.5]])) - 0.25) < 1e-6
    assert abs(math.exp(-sl.set_average_distance(x, [[0.1, 0.5], [0.9, 0.5]], reduce="sum")) - 0.2025) < 1e-6

    rng = random.Random(0)
    for _ in range(20):
        n, f = rng.randint(1, 5), rng.randint(1, 5)
        t = [[float(rng.random() < 0.5) for _ in range(f)] for _ in range(n)]
        y = [[rng.random() for _ in range(f)] for _ in range(n)]
        assert abs(sl.set_cross_entropy(t, y) - sce(t, y, eps)) < 1e-9
        assert sl.set_average_distance(t, y) <= sl.hausdorff_distance(t, y) + 1e-9
        value, grad = sl.loss_and_gradient("sce", t, y)
        assert abs(value - sce(t, y, eps)) < 1e-9
        i, j, h = rng.randrange(n), rng.randrange(f), 1e-6
        up = [row[:] for row in y]
        down = [row[:] for row in y]
        up[i][j] += h
        down[i][j] -= h
        numeric = (sce(t, up, eps) - sce(t, down, eps)) / (2 * h)
        assert abs(grad[i][j] - numeric) <= 1e-4 * max(1.0, abs(numeric)), (grad[i][j], numeric)

    try:
        sl.set_cross_entropy([[0.0, 1.0]], [[0.5]])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch was accepted")

    # tile t on square t: tile one-hot, then column and row one-hots
    state = [
        [float(k == t) for k in range(9)] + [float(k == t % 3) for k in range(3)] + [float(k == t // 3) for k in range(3)]
        for t in range(9)
    ]
    noisy = [[0.8 if v else 0.1 for v in row] for row in reversed(state)]
    assert sl.puzzle_success(state, noisy)
    assert not sl.puzzle_success(state, noisy[:8] + [noisy[0]])

    walks = sl.enumerate_clauses([("a", "b"), ("b", "c"), ("c", "d"), ("b", "d")], 2)
    assert len(walks) == 1 * 0 + 3 * 2 + 2 * 1 + 2 * 1
    assert ["a", "b", "c"] in walks

    checks, failed = sl.gradcheck(seed=1, graphs=10, loss_points=10)
    assert checks > 40 and not failed, failed

    assert sl.puzzle_state_count() == 362880
    print("pysetloss smoke test passed")


if __name__ == "__main__":
    main()
