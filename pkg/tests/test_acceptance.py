"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible in ``pytest -v``
output) before asserting, so a run's log doubles as the acceptance report.
The phantom registrations use voxel-unit step sizes and a mean-normalised
smoothness weight; see the README for why the library defaults are not used
there.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from fcreg import evalsuite, funcconn, warp
from fcreg.evalsuite import TMap, dice, one_sample_tmap, overlap_count, threshold_report
from fcreg.funcconn import FCConfig, FCHistogram, bc_distance, fc_histogram, pearson
from fcreg.objective import LossWeights, Objective, OptimizerConfig, loss_gradient, mse_loss, register, smoothness_loss
from fcreg.pipeline.cli import main
from fcreg.pipeline.config import RunConfig, load_config
from fcreg.pipeline.nifti import read_nifti, write_nifti
from fcreg.pipeline.phantom import PhantomSpec, make_phantom
from fcreg.volume import DisplacementField, LabelVolume, ScalarVolume, TimeSeriesVolume

from . import oracles


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, detail

    return emit


def _agreement(g, fd):
    big = np.maximum(np.abs(g), np.abs(fd))
    # components whose true derivative is 0 show up as ~1e-18 vs 0.0
    ok = (np.abs(g - fd) <= 1e-3 * big) | (big < 1e-10)
    return float(ok.mean())


def test_gradient_correctness(report):
    rng = np.random.default_rng(0)
    shape = (8, 8, 8)
    fT1 = ScalarVolume(gaussian_filter(rng.random(shape), 1.0))
    mT1 = ScalarVolume(gaussian_filter(rng.random(shape), 1.0))
    ff = TimeSeriesVolume(gaussian_filter(rng.standard_normal(shape + (12,)), (2, 2, 2, 0)))
    mf = TimeSeriesVolume(gaussian_filter(rng.standard_normal(shape + (12,)), (2, 2, 2, 0)))
    zeros = ScalarVolume(np.zeros(shape))
    field = DisplacementField(rng.uniform(-1.5, 1.5, shape + (3,)))
    cfg = FCConfig(w=3, soft=True)
    cases = {
        "t1": (fT1, mT1, LossWeights(0.0, 0.0)),
        "fc": (zeros, zeros, LossWeights(1.0, 0.0)),
        "smooth": (zeros, zeros, LossWeights(0.0, 1.0)),
        "combined": (fT1, mT1, LossWeights(0.01, 0.01)),
    }
    start = time.perf_counter()
    scores = {}
    for name, (a, b, w8) in cases.items():
        g = loss_gradient(a, b, ff, mf, field, w8, cfg)
        fd = loss_gradient(a, b, ff, mf, field, w8, cfg, grad_mode="finite_difference", step=1e-3)
        scores[name] = _agreement(g, fd)
    elapsed = time.perf_counter() - start
    ok = all(s >= 0.99 for s in scores.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.4f}" for k, v in scores.items()) + f"; {elapsed:.1f} s"
    report(1, "analytic vs finite-difference gradient", ok, detail)


def test_oracle_equivalence(report):
    rng = np.random.default_rng(1)
    errs = {}
    f, r = rng.standard_normal((16, 16, 16)), rng.standard_normal((16, 16, 16))
    errs["mse"] = abs(mse_loss(ScalarVolume(f), ScalarVolume(r)) - oracles.mse(f, r))
    vec = rng.standard_normal((10, 10, 10, 3))
    errs["smoothness"] = abs(smoothness_loss(DisplacementField(vec)) - oracles.smoothness(vec))

    a, b = np.zeros(21), np.zeros(21)
    a[5], b[5], b[6] = 4, 1, 3
    got = bc_distance(FCHistogram(a), FCHistogram(b))
    errs["bc worked example"] = abs(got - math.sqrt(0.5))
    ha, hb = rng.random(21), rng.random(21)
    errs["bc random"] = abs(bc_distance(FCHistogram(ha), FCHistogram(hb)) - oracles.bc(ha.tolist(), hb.tolist()))

    errs["pearson worked example"] = abs(pearson([1, 2, 3], [1, 2, 4]) - 9 / (2 * math.sqrt(21)))
    x, y = rng.standard_normal(50), rng.standard_normal(50)
    errs["pearson random"] = abs(pearson(x, y) - oracles.pearson(x.tolist(), y.tolist()))

    la, lb = rng.integers(0, 5, (12, 12, 12)), rng.integers(0, 5, (12, 12, 12))
    got_d = dice(LabelVolume(la), LabelVolume(lb), [1, 2, 3, 4]).scores
    want_d = oracles.dice(la, lb, [1, 2, 3, 4])
    errs["dice"] = max(abs(got_d[k] - want_d[k]) for k in want_d)

    maps = [rng.standard_normal((6, 6, 6)) + 0.5 for _ in range(5)]
    tm = one_sample_tmap([ScalarVolume(m) for m in maps])
    want_t = np.array([oracles.tstat([m[i] for m in maps]) for i in np.ndindex(6, 6, 6)]).reshape(6, 6, 6)
    t_err = float(np.max(np.abs(tm.t - want_t)))

    errs["threshold"] = abs(threshold_report(tm, 1.0).count - oracles.count_above(tm.t.ravel().tolist(), 1.0))
    tm2 = TMap(rng.standard_normal((6, 6, 6)) * 3, 5)
    errs["overlap"] = abs(overlap_count(tm, 1.0, tm2, 0.5)
                          - oracles.overlap(tm.t.ravel().tolist(), 1.0, tm2.t.ravel().tolist(), 0.5))
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) <= 1e-9 and t_err <= 1e-6
    report(2, "brute-force oracle equivalence", ok,
           f"max error {errs[worst]:.2e} ({worst}), t-map {t_err:.2e}")


def test_identity_registration(report):
    ph = make_phantom(PhantomSpec(size=(24, 24, 24), timepoints=30, seed=0))
    cfg = RunConfig(downsample_factor=1, iterations=100)
    field, history = register(ph.fixed_t1, ph.fixed_t1, ph.fixed_fmri, ph.fixed_fmri,
                              cfg.loss_weights(), cfg.fc_config(), cfg.optimizer_config(), 1)
    mean_u = float(field.magnitude().mean())
    totals = np.array([h.total for h in history])
    avg = np.convolve(totals, np.ones(10) / 10, mode="valid")
    monotone = bool(np.all(np.diff(avg) <= 0))
    ok = mean_u < 0.1 and monotone and len(history) == 100
    report(3, "identity registration stays at zero", ok,
           f"mean |u| {mean_u:.3g}, moving average non-increasing: {monotone}")


def test_phantom_recovery(report):
    ph = make_phantom(PhantomSpec(size=(48, 64, 64), timepoints=20, seed=1, max_displacement=3.0,
                                  n_regions=30, noise_std=0.2, factor=2))
    inside = ph.mask.inside
    start = time.perf_counter()
    field, _ = register(ph.fixed_t1, ph.moving_t1, ph.fixed_fmri, ph.moving_fmri,
                        LossWeights(0.01, 0.01 / inside.size), FCConfig(w=5),
                        OptimizerConfig(learning_rate=0.05, iterations=300), 2)
    elapsed = time.perf_counter() - start
    epe = float(np.linalg.norm(field.vectors - ph.truth.vectors, axis=-1)[inside].mean())
    before = dice(ph.labels_fixed, ph.labels_moving).mean
    after = dice(ph.labels_fixed, LabelVolume(warp.warp_labels(ph.labels_moving.labels, field))).mean
    ok = epe < 1.0 and after - before >= 0.10 and elapsed < 600
    report(4, "phantom recovery", ok,
           f"EPE {epe:.3f} voxel, Dice {before:.3f} -> {after:.3f} (+{after - before:.3f}), {elapsed:.0f} s")


def test_functional_term_effect(report):
    ph = make_phantom(PhantomSpec(size=(24, 24, 24), timepoints=20, seed=0, max_displacement=3.0,
                                  n_regions=12, noise_std=0.2, flat_interior=True))
    gamma = 0.01 / ph.mask.inside.size
    cfg = FCConfig(w=5)
    opt = OptimizerConfig(learning_rate=0.05, iterations=150)
    finals = {}
    for lam in (0.0, 0.01):
        w8 = LossWeights(lam, gamma)
        field, _ = register(ph.fixed_t1, ph.moving_t1, ph.fixed_fmri, ph.moving_fmri, w8, cfg, opt)
        obj = Objective(ph.fixed_t1, ph.moving_t1, ph.fixed_fmri, ph.moving_fmri, w8, cfg)
        finals[lam] = obj.loss(field.vectors).f_sim
    ratio = finals[0.01] / finals[0.0]
    report(5, "functional term drives functional alignment", ratio <= 0.9,
           f"final f_sim {finals[0.01]:.4f} (lambda 0.01) vs {finals[0.0]:.4f} (lambda 0), ratio {ratio:.3f}")


def test_invariance_suite(report):
    rng = np.random.default_rng(6)
    failures = []

    x, y = rng.standard_normal(30), rng.standard_normal(30)
    r = pearson(x, y)
    for a, b in [(3.0, -2.0), (0.01, 100.0), (-7.0, 1.0)]:
        if abs(pearson(a * x + b, y) - math.copysign(1, a) * r) > 1e-12:
            failures.append("pearson affine")

    hard = FCConfig(w=3, soft=False)
    data = rng.standard_normal((3, 3, 3, 15))
    before = funcconn.fc_histogram(funcconn.local_fc_map(TimeSeriesVolume(data), (1, 1, 1), hard), hard).counts
    flat = data.reshape(27, 15).copy()
    others = [i for i in range(27) if i != 13]
    flat[others] = flat[rng.permutation(others)]
    after = fc_histogram(funcconn.local_fc_map(TimeSeriesVolume(flat.reshape(data.shape)), (1, 1, 1), hard), hard)
    if not np.array_equal(before, after.counts):
        failures.append("histogram permutation")

    for _ in range(20):
        ha = FCHistogram(rng.random(21) * (rng.random(21) < 0.5) + 1e-3)
        hb = FCHistogram(rng.random(21) * (rng.random(21) < 0.5) + 1e-3)
        d = bc_distance(ha, hb)
        if d != bc_distance(hb, ha) or not 0.0 <= d <= 1.0:
            failures.append("bc symmetry/range")

    la, lb = LabelVolume(rng.integers(0, 4, (8, 8, 8))), LabelVolume(rng.integers(0, 4, (8, 8, 8)))
    if dice(la, lb).scores != dice(lb, la).scores:
        failures.append("dice symmetry")

    tm = TMap(rng.standard_normal((8, 8, 8)) * 3, 10)
    counts = [threshold_report(tm, t).count for t in np.linspace(-5, 5, 41)]
    if any(b > a for a, b in zip(counts, counts[1:])):
        failures.append("threshold monotonicity")

    for f in (1, 2, 3, 4):
        c = rng.uniform(-10, 10, 3)
        out = warp.downsample_field(DisplacementField(np.broadcast_to(c, (12, 12, 12, 3))), f).vectors
        if np.max(np.abs(out - c / f)) > 1e-12:
            failures.append(f"downsample scaling f={f}")

    report(6, "invariance suite", not failures, "all properties hold" if not failures else ", ".join(failures))


def test_determinism_and_io(report, tmp_path):
    problems = []
    d = tmp_path / "ph"
    main(["synth", "--out-dir", str(d), "--size", "16", "16", "16", "--timepoints", "12", "--seed", "4"])
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"w": 5, "iterations": 10, "learning_rate": 0.05, "downsample_factor": 1}))
    args = ["register", "--fixed-t1", str(d / "fixed_t1.nii"), "--moving-t1", str(d / "moving_t1.nii"),
            "--fixed-fmri", str(d / "fixed_fmri.nii"), "--moving-fmri", str(d / "moving_fmri.nii"),
            "--config", str(cfg)]
    codes = [main(args + ["--out-field", str(tmp_path / f"run{i}.nii")]) for i in (0, 1)]
    if codes != [0, 0] or (tmp_path / "run0.nii").read_bytes() != (tmp_path / "run1.nii").read_bytes():
        problems.append("field files differ between runs")

    vol = ScalarVolume(np.random.default_rng(7).standard_normal((9, 8, 7)).astype(np.float32).astype(float),
                       (1.5, 2.0, 3.0))
    write_nifti(vol, tmp_path / "rt.nii")
    back = read_nifti(tmp_path / "rt.nii")
    if not (np.array_equal(back.data, vol.data) and back.spacing == vol.spacing):
        problems.append("NIfTI round trip not bit-exact")

    empty = tmp_path / "empty.json"
    empty.write_text("")
    c = load_config(empty)
    if (c.w, c.lam, c.gamma, c.learning_rate) != (21, 0.01, 0.01, 1e-4):
        problems.append(f"defaults {c}")
    report(7, "determinism and I/O", not problems, "all checks hold" if not problems else "; ".join(problems))
