"""Smoke test for the gasdro_py extension module."""

import math
import random

import gasdro_py as g


def main():
    s = g.NoiseSchedule(2, 0.1, 0.2)
    assert abs(s.alpha_bar(2) - 0.72) < 1e-12
    assert abs(s.iota(2) - 1.25) < 1e-12

    rng = random.Random(0)
    data = [[(2.0 if i % 2 else -2.0) + 0.3 * rng.gauss(0, 1)] for i in range(512)]
    m = g.DiffusionModel(1, g.NoiseSchedule(16, 0.001, 0.3, 0.1), hidden=[32, 32], seed=1)
    losses = m.fit(data, 300, seed=2)
    assert len(losses) == 300 and all(math.isfinite(l) for l in losses)
    samples = m.sample(200, seed=3)
    assert len(samples) == 200 and len(samples[0]) == 1
    print(f"ddpm w1={g.wasserstein1([x[0] for x in samples], [x[0] for x in data]):.3f}")

    v = g.kl_dro_value([0.0, 1.0], 0.1)
    assert abs(v - 0.720) < 1e-3, v
    assert g.wasserstein1([0.0, 1.0], [1.0, 2.0]) == 1.0

    w = g.corrupt([0.0] * 10, "cutout", 0.3, seed=4)
    assert w.count(1.0) == 3

    ok, line = g.run_probe("kl-duality", 5)
    assert ok, line
    print(line)

    assert g.run_cli(["verify", "--only", "nonsense"]) == 2

    exp = g.Experiment(overrides=["train.epochs=5", "data.train_length=240", "data.test_length=160"], seed=0)
    avg, worst = exp.clean_mse("erm")
    assert math.isfinite(avg) and worst >= avg
    print(f"erm clean avg={avg:.4f} worst={worst:.4f} over {exp.test_ids}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
