#!/usr/bin/env python3
"""Smoke test for the morphfit_py extension module.

Locates the compiled library under target/, imports it, and runs each
binding once with checks loose enough to be robust but tight enough to
catch a broken build. Run from anywhere:

    cargo build -p morphfit-py
    python3 python/smoke_test.py
"""

import math
import random
import shutil
import struct
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]


def import_module(tmp: Path):
    candidates = [
        REPO_ROOT / "target" / profile / "libmorphfit_py.so"
        for profile in ("debug", "release")
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("libmorphfit_py.so not found; run `cargo build -p morphfit-py` first")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    shutil.copy(newest, tmp / "morphfit_py.so")
    sys.path.insert(0, str(tmp))
    import morphfit_py

    return morphfit_py


def ok(label):
    print(f"ok - {label}")


def check_confidence_map(m, tmp):
    cmap = m.synth_circle_map(
        128, 128, 64.0, 63.0, 30.0, ridge_sigma=2.0, background_noise_sigma=0.02, seed=1
    )
    assert cmap.width == 128 and cmap.height == 128
    values = cmap.values()
    assert len(values) == 128 * 128
    assert all(0.0 <= v <= 1.0 for v in values)
    assert cmap.get(0, 0) < 0.5
    assert abs(cmap.sample_bilinear(64.0, 33.0) - 1.0) < 0.1
    foreground = cmap.threshold_foreground(0.5)
    assert len(foreground) > 100
    try:
        cmap.get(128, 0)
    except IndexError:
        pass
    else:
        raise AssertionError("out-of-range get did not raise IndexError")

    path = tmp / "smoke.cmap"
    cmap.save(path)
    reloaded = m.ConfidenceMap.load(path)
    diff = max(abs(a - b) for a, b in zip(values, reloaded.values()))
    assert diff < 1e-6, f"save/load drifted by {diff}"
    ok("confidence map synthesis, sampling, and save/load")
    return cmap


def check_circle_fits(m, cmap):
    detection = m.detect_circle(cmap, method="algebraic")
    estimate = (detection["cx"], detection["cy"], detection["r"])
    rmse = m.circle_param_rmse(estimate, (64.0, 63.0, 30.0))
    assert rmse < 0.5, f"detection rmse {rmse}"
    assert detection["n_foreground"] > 100
    assert detection["method"] == "algebraic"

    refined = m.detect_circle(cmap, method="geometric")
    assert refined["method"] == "geometric"
    assert refined["cost"] <= detection["cost"] * (1.0 + 1e-9)

    empty = m.ConfidenceMap.zeros(64, 64)
    try:
        m.detect_circle(empty)
    except ValueError as e:
        assert "foreground" in str(e)
    else:
        raise AssertionError("empty map did not raise ValueError")

    angles = [2.0 * math.pi * i / 12 for i in range(12)]
    points = [(5.0 + 2.0 * math.cos(a), -3.0 + 2.0 * math.sin(a)) for a in angles]
    cx, cy, r = m.algebraic_circle_fit(points)
    assert max(abs(cx - 5.0), abs(cy + 3.0), abs(r - 2.0)) < 1e-9

    fit = m.geometric_circle_fit(points, init=(5.3, -2.8, 1.5))
    assert fit["converged"]
    assert max(abs(fit["cx"] - 5.0), abs(fit["cy"] + 3.0), abs(fit["r"] - 2.0)) < 1e-6
    ok("circle detection and direct fits")


def check_shape_model(m, tmp):
    base = [
        (48.0 + 20.0 * math.cos(2.0 * math.pi * i / 16),
         46.0 + 20.0 * math.sin(2.0 * math.pi * i / 16))
        for i in range(16)
    ]
    family = m.generate_shape_family(base, 40, 1, [1.0], seed=3)
    assert len(family) == 40 and len(family[0]) == 16

    model = m.build_pdm(family, variance_fraction=0.99)
    assert model.n_landmarks == 16
    assert model.n_modes >= 1
    eigenvalues = model.eigenvalues
    assert all(a >= b for a, b in zip(eigenvalues, eigenvalues[1:]))
    assert len(model.mean_shape) == 16
    assert len(model.mode(0)) == 16
    try:
        model.mode(model.n_modes)
    except IndexError:
        pass
    else:
        raise AssertionError("out-of-range mode did not raise IndexError")

    coeffs = [0.0] * model.n_modes
    coeffs[0] = 0.8 * math.sqrt(eigenvalues[0])
    shape = model.reconstruct(coeffs)
    recovered = model.project(shape)
    assert max(abs(a - b) for a, b in zip(recovered, coeffs)) < 1e-8

    wild = [10.0 * math.sqrt(l) for l in eigenvalues]
    clamped = model.constrain(wild)
    assert all(
        abs(c - 3.0 * math.sqrt(l)) < 1e-12 for c, l in zip(clamped, eigenvalues)
    )

    path = tmp / "smoke.pdm"
    model.save(path)
    reloaded = m.PointDistributionModel.load(path)
    assert reloaded.n_modes == model.n_modes
    assert max(
        abs(a - b) for a, b in zip(reloaded.eigenvalues, model.eigenvalues)
    ) < 1e-12
    ok("shape model build, projection, constraint, and save/load")
    return model, coeffs


def check_registration(m):
    rng = random.Random(11)
    blob = [(rng.uniform(0.0, 20.0), rng.uniform(0.0, 12.0)) for _ in range(40)]

    def similarity(points, theta, s, tx, ty):
        c, sn = math.cos(theta), math.sin(theta)
        return [(s * (c * x - sn * y) + tx, s * (sn * x + c * y) + ty) for x, y in points]

    target = similarity(blob, 0.5, 1.2, 5.0, -3.0)
    result = m.cpd_register(blob, target)
    pose = result["pose"]
    assert abs(pose["rotation"] - 0.5) < 1e-3
    assert abs(pose["scale"] - 1.2) < 1e-3
    assert abs(pose["tx"] - 5.0) < 1e-2
    assert abs(pose["ty"] + 3.0) < 1e-2
    assert not pose["reflected"]
    assert result["sigma2"] < 1e-6

    flipped = similarity(blob, math.pi, 1.0, 0.0, 0.0)
    robust = m.cpd_register(blob, flipped, rotations=8, try_reflection=True)
    assert abs(abs(robust["pose"]["rotation"]) - math.pi) < 1e-2
    assert robust["sigma2"] < 1e-6

    mirrored = [(-x, y) for x, y in blob]
    reflected = m.cpd_register(blob, mirrored, rotations=8, try_reflection=True)
    assert reflected["pose"]["reflected"]
    assert reflected["sigma2"] < 1e-6
    ok("point-set registration, restarts, and reflection")


def check_shape_fit(m, model, coeffs):
    mean = model.mean_shape
    mx = sum(x for x, _ in mean) / len(mean)
    my = sum(y for _, y in mean) / len(mean)
    rms = math.sqrt(
        sum((x - mx) ** 2 + (y - my) ** 2 for x, y in mean) / len(mean)
    )
    scale = 20.0 / rms
    truth = [
        (48.0 + scale * (x - mx), 46.0 + scale * (y - my))
        for x, y in model.reconstruct(coeffs)
    ]
    cmap = m.synth_outline_map(
        96, 96, truth, ridge_sigma=2.0, background_noise_sigma=0.02, seed=9
    )
    fit = m.fit_shape(model, cmap)
    assert fit["converged"]
    assert len(fit["points"]) == model.n_landmarks
    assert len(fit["movement"]) == fit["iterations"]
    rmse = m.point_to_curve_rmse(fit["points"], truth)
    assert rmse < 1.0, f"shape fit rmse {rmse}"

    empty = m.ConfidenceMap.zeros(96, 96)
    try:
        m.fit_shape(model, empty)
    except ValueError:
        pass
    else:
        raise AssertionError("empty map did not raise ValueError")
    ok("shape model fit on a synthetic map")


def check_render(m, tmp):
    nx = ny = nz = 16
    volume_path = tmp / "cube.ctvol"
    with open(volume_path, "wb") as f:
        f.write(f"CTVOL 1 {nx} {ny} {nz} 1 1 1 0 0 0\n".encode())
        f.write(struct.pack(f"<{nx * ny * nz}h", *([0] * (nx * ny * nz))))

    out_path = tmp / "cube.pgm"
    pixels = m.render_drr(
        volume_path,
        out_path,
        focal_point=(7.5, 7.5, -200.0),
        detector_center=(7.5, 7.5, 100.0),
        pixel_pitch=1.0,
        image_size=(32, 32),
        n_samples=200,
    )
    assert len(pixels) == 32 * 32
    assert pixels[0] == 255, "corner ray misses the cube and saturates"
    center = pixels[16 * 32 + 16]
    assert center < 255, "center ray crosses water and stays darker"
    header = out_path.read_bytes()[:16]
    assert header.startswith(b"P5\n32 32\n255\n")
    ok("radiograph render to PGM")


def main():
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        m = import_module(tmp)
        cmap = check_confidence_map(m, tmp)
        check_circle_fits(m, cmap)
        model, coeffs = check_shape_model(m, tmp)
        check_registration(m)
        check_shape_fit(m, model, coeffs)
        check_render(m, tmp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
