#!/usr/bin/env python3
"""Smoke test for the csde_py extension module.

Builds the cdylib if needed, imports it, and exercises every exposed type
and function with quick numeric checks. Exits nonzero on the first failure.
"""

import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    lib = REPO / "target" / "debug" / "libcsde_py.so"
    if not lib.is_file():
        subprocess.run(
            ["cargo", "build", "-p", "csde-py"], cwd=REPO, check=True
        )
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    stage = Path(tempfile.mkdtemp(prefix="csde_py_"))
    shutil.copy2(lib, stage / f"csde_py{suffix}")
    sys.path.insert(0, str(stage))
    import csde_py

    return csde_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b} (tol {tol})"


def main():
    m = load_module()

    # Schedule: variance-preserving identity and kernel determinism.
    sched = m.Schedule()
    for t in (0.0, 0.3, 1.0):
        mc = sched.mean_coeff(t)
        sd = sched.marginal_std(t)
        approx(mc * mc + sd * sd, 1.0, 1e-12)
    assert sched.perturb([1.0, -2.0], 0.4, seed=5) == sched.perturb(
        [1.0, -2.0], 0.4, seed=5
    )
    print("ok schedule")

    # Mixture: score matches a central finite difference of log_density.
    mix = m.Mixture(
        [0.4, 0.6], [[-2.0, 0.0], [2.0, 1.0]], [[0.5, 0.5], [0.4, 0.8]]
    )
    y, t, h = [0.3, -0.9], 0.35, 1e-5
    score = mix.score(sched, y, t)
    for j in range(2):
        up = list(y)
        up[j] += h
        down = list(y)
        down[j] -= h
        fd = (mix.log_density(sched, up, t) - mix.log_density(sched, down, t)) / (
            2 * h
        )
        approx(score[j], fd, 1e-6)
    draws = mix.sample(500, seed=11)
    assert len(draws) == 500 and len(draws[0]) == 2
    print("ok mixture")

    # Encoder: shapes, determinism, checkpoint round trip.
    enc = m.Encoder(2, [16, 8], [8, 4], time_embed_dim=8, seed=3)
    assert enc.input_dim == 2
    h_repr, z = enc.encode([0.5, -1.0], 0.25)
    assert len(h_repr) == 8 and len(z) == 4
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "enc.ckpt")
        enc.save(path)
        again = m.Encoder.load(path)
        assert again.encode([0.5, -1.0], 0.25) == (h_repr, z)
    print("ok encoder")

    # Contrastive loss: four identical embeddings give ln 3.
    batch = [[0.3, -0.7, 0.2]] * 4
    approx(m.nt_xent_loss(batch, 0.1), math.log(3.0), 1e-12)
    print("ok nt_xent_loss")

    # Guidance gradient matches a finite difference of the energy
    # Q = -lambda * similarity.
    lam, sim = 7.0, "cosine"
    x_pert = [0.1, 0.8]
    val, grad = m.guidance_grad(enc, y, x_pert, t, lam, sim)
    assert -1.0 <= val <= 1.0
    for j in range(2):
        up = list(y)
        up[j] += h
        down = list(y)
        down[j] -= h
        fd = (
            -lam * m.guidance_grad(enc, up, x_pert, t, lam, sim)[0]
            + lam * m.guidance_grad(enc, down, x_pert, t, lam, sim)[0]
        ) / (2 * h)
        approx(grad[j], fd, 1e-4)
    print("ok guidance_grad")

    # Translation: deterministic in the seed, and guidance changes the path.
    sources = [[0.0, 0.0], [1.0, 1.0]]
    plain = m.translate(sources, mix, sched, seed=9, steps=60)
    again = m.translate(sources, mix, sched, seed=9, steps=60)
    assert plain == again
    guided = m.translate(
        sources, mix, sched, seed=9, steps=60, **{"lambda": 4.0}, encoder=enc
    )
    assert guided != plain
    assert all(math.isfinite(v) for row in guided for v in row)
    try:
        m.translate(sources, mix, sched, seed=9, **{"lambda": 4.0})
        raise AssertionError("guided translate without an encoder should fail")
    except ValueError:
        pass
    print("ok translate")

    print("smoke test passed")


if __name__ == "__main__":
    main()
