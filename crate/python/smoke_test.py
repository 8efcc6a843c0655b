"""Smoke test for the kdgp extension module."""

import json
import math
import random

import kdgp


def main():
    basis = kdgp.Basis(40, 0.6, sigma_s=1.0, l=0.2, sigma_n=0.1, l_k=100.0)
    assert len(basis) == 40
    assert basis.approx_kernel((0.1, 0.2), (0.0, -0.1)) == basis.approx_kernel((0.0, -0.1), (0.1, 0.2))

    rng = random.Random(0)
    pts = [(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)) for _ in range(30)]
    vals = [math.sin(3 * x) * math.cos(2 * y) for x, y in pts]

    seq = kdgp.Posterior(basis)
    for (x, y), v in zip(pts, vals):
        seq.update(x, y, v)
    joint = kdgp.Posterior(basis)
    joint.update_many(pts, vals)
    gap = max(abs(a - b) for a, b in zip(seq.mean, joint.mean))
    assert gap < 1e-8, gap

    (mean, var), = seq.predict([(0.1, 0.1)])
    assert abs(mean - math.sin(0.3) * math.cos(0.2)) < 0.2 and var >= 0.0
    seq.predict_step(25.0)

    # path 0-1-2: exact sum after two rounds
    mats = [[[0.0] * 3 for _ in range(2)] for _ in range(3)]
    for r in range(3):
        mats[r][0][r] = r + 1.0
        mats[r][1][r] = -(r + 1.0)
    final, iters = kdgp.dual_extrema_consensus(3, [(0, 1), (1, 2)], mats, t_max=10)
    assert all(m == [[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]] for m in final), final

    field = kdgp.convection_diffusion(21, 21, 0.5, amplitude=100.0)
    assert len(field) == 21 and max(max(row) for row in field) > 0.0

    summary = json.loads(kdgp.run_experiment("consensus-bench", ["trials=3", "basis_len=8"]))
    assert summary["methods"]["dual_extrema"]["rmse_centralized"]["mean"] < 1e-10
    print("smoke test passed")


if __name__ == "__main__":
    main()
