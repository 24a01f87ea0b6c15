"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The desk-scale overfit (criterion 6) trains two networks and takes several
minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from sparsessc import metrics
from sparsessc.cli import main
from sparsessc.features import compute_normals, ftsdf_value, spherical_project
from sparsessc.fusion import mvf_lift
from sparsessc.geometry import GridGeometry, ProjectionConfig
from sparsessc.losses import focal, ga_weights, local_stats, weighted_ce
from sparsessc.oracles import (bisect_scan, iou_oracle, mvf_oracle, plane_fit_normals,
                               smooth_surface)
from sparsessc.scene_io import (PointCloud, generate_synthetic_scene, random_scene_spec,
                                write_label_grid, write_scan)
from sparsessc.selfcheck import conv_case, gradient_report
from sparsessc.sparse.autograd import Var
from sparsessc.sparse.tensor_io import read_tensor
from sparsessc.training.desk import overfit


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
        return ok
    return emit


# 1 ---------------------------------------------------------------------------

def test_c1_sparse_conv_matches_dense(report):
    rng = np.random.default_rng(101)
    kinds = [("same", k) for k in (1, 3, 5)] + [(m, k) for m in ("strided", "transposed")
                                                 for k in (1, 2, 3, 5)]
    t = time.perf_counter()
    errs = [conv_case(rng, 16, mode, K) for _ in range(20) for mode, K in kinds]
    dt = time.perf_counter() - t
    worst = max(errs)
    ok = len(errs) >= 200 and worst <= 1e-5 and dt < 60
    assert report(1, ok, f"{len(errs)} cases over {len(kinds)} mode/kernel pairs, "
                         f"max relative error {worst:.1e}, {dt:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_c2_gradient_suite(report):
    t = time.perf_counter()
    rep = gradient_report(n_ops=100, n_net=100, seed=11)
    dt = time.perf_counter() - t
    bad = {k: v for k, v in rep.items() if v[0] > v[2]}
    op_worst = max(v[0] for k, v in rep.items() if k != "network")
    redrawn = sum(v[1] for v in rep.values())
    ok = not bad and dt < 300 and "network" in rep
    assert report(2, ok, f"{len(rep) - 1} ops + network x 100 each; worst op {op_worst:.1e}, "
                         f"network {rep['network'][0]:.1e}; {redrawn} kink draws redrawn; {dt:.0f}s"
                         + (f"; failing {sorted(bad)}" if bad else ""))


# 3 ---------------------------------------------------------------------------

def test_c3_loss_analytics(report):
    y = np.arange(20)
    ce = float(weighted_ce(Var(np.zeros((20, 20))), y).data)
    ok_ce = abs(ce - math.log(20)) <= 1e-9
    rng = np.random.default_rng(3)
    ok_focal = True
    for _ in range(200):
        z, lab = rng.standard_normal((16, 20)) * 3, rng.integers(0, 20, 16)
        ok_focal &= float(focal(Var(z), lab, 0.0).data) == float(weighted_ce(Var(z), lab).data)
    cube = np.full((8, 8, 8), 11)
    interior = np.argwhere(np.ones((6, 6, 6), bool)) + 1
    ok_cube = bool(np.all(ga_weights(cube, interior) == 0))
    iso = np.full((3, 3, 3), 2)
    iso[1, 1, 1] = 7
    extremes = (local_stats(cube, (4, 4, 4)).m_lga, local_stats(iso, (1, 1, 1)).m_lga)
    ok = ok_ce and ok_focal and ok_cube and extremes == (0, 26)
    assert report(3, ok, f"CE-ln20 {ce - math.log(20):+.1e}; focal(0)==CE {ok_focal}; "
                         f"cube weights zero {ok_cube}; M_LGA extremes {extremes}")


# 4 ---------------------------------------------------------------------------

def test_c4_mvf_oracle(report):
    rng = np.random.default_rng(4)
    n = mismatch = violated = 0
    for _ in range(500):
        X, Y = rng.integers(1, 33, 2)
        Z = int(rng.integers(1, 9))
        k = int(rng.integers(2, 21))
        p3 = np.where(rng.random((X, Y, Z)) < rng.uniform(0.02, 0.4), rng.integers(1, k, (X, Y, Z)), 0)
        p2 = rng.integers(0, k, (X, Y))
        out = mvf_lift(p3, p2)
        mismatch += not np.array_equal(out, mvf_oracle(p3, p2))
        violated += not (np.array_equal(out[p3 > 0], p3[p3 > 0]) and np.array_equal(mvf_lift(out, p2), out))
        n += 1
    assert report(4, mismatch == 0 and violated == 0,
                  f"{n} instances; {mismatch} oracle mismatches; {violated} invariant violations")


# 5 ---------------------------------------------------------------------------

def test_c5_metrics_oracle(report):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 7, 3))
        k = int(rng.integers(2, 21))
        p, g = rng.integers(0, k, shape), rng.integers(0, k, shape)
        inv = rng.random(shape) < 0.1
        r = metrics.evaluate(p, g, inv)
        o_per, o_mean, o_comp = iou_oracle(p, g, inv)
        same = ({c for c in range(1, 20) if not np.isnan(r.per_class[c])} == set(o_per)
                and all(r.per_class[c] == v for c, v in o_per.items())
                and r.mean == o_mean and r.completion == o_comp
                and metrics.completion_iou(p, g, inv) == o_comp)
        bad += not same
    pred = np.ones((2, 2, 2), int)
    gt = pred.copy()
    gt[1] = 2
    hand = metrics.miou(pred, gt)[1]
    assert report(5, bad == 0 and hand == 0.25, f"1000 grids, {bad} mismatches; hand case {hand}")


# 6 ---------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("kind,targets", [("3d", {"completion": 0.90, "mean": 0.85}),
                                          ("2d", {"mean": 0.90})])
def test_c6_desk_overfit(report, kind, targets):
    epochs, dt, r = overfit(kind, epochs=300, eval_every=10, budget=1800.0, targets=targets, echo=None)
    ok = all(getattr(r, k) >= v for k, v in targets.items()) and epochs <= 300 and dt <= 1800
    label = "BEV mIoU" if kind == "2d" else "mIoU"
    assert report(6, ok, f"{kind}: {label} {r.mean:.4f}, completion {r.completion:.4f} "
                         f"after {epochs} epochs, {dt:.0f}s")


# 7 ---------------------------------------------------------------------------

def test_c7_default_grid(report, tmp_path):
    g = GridGeometry()
    ijk = np.array([[0, 0, 0], [255, 255, 31], [255, 0, 0], [0, 255, 31], [100, 128, 16]])
    inside = g.centers(ijk)
    outside = np.array([[51.21, 0.0, 0.0], [-0.01, 0.0, 0.0], [10.0, 25.61, 0.0], [10.0, 0.0, 4.41]])
    xyz = np.vstack([inside, outside])
    write_scan(tmp_path / "s.bin", PointCloud(np.column_stack([xyz, np.full(len(xyz), 0.5)])))
    code = main(["preprocess", str(tmp_path / "s.bin"), str(tmp_path / "s")])
    x3 = read_tensor(tmp_path / "s.x3d.sst")
    occ = sorted(map(tuple, x3.coords[x3.feats.data[:, 5] > 0].tolist()))
    ok = (code == 0 and g.dims == (256, 256, 32) and g.voxel_size == (0.2, 0.2, 0.2)
          and np.allclose(g.origin, (0.0, -25.6, -2.0)) and np.allclose(g.upper, (51.2, 25.6, 4.4))
          and occ == sorted(map(tuple, ijk.tolist())))
    upper = tuple(np.round(g.upper, 6).tolist())
    assert report(7, ok, f"grid {g.dims} at {g.voxel_size[0]} m over {tuple(g.origin)}..{upper}; "
                         f"{len(occ)} of {len(inside)} in-extent points voxelized, "
                         f"{len(outside)} outside dropped")


# 8 ---------------------------------------------------------------------------

def _pipeline(root, data):
    out = {}
    base = ["--preset", "desk-3d", "--seed", "7", "--threads", "1"]
    for name in sorted(p.stem for p in data.glob("*.bin")):
        assert main(["preprocess", str(data / f"{name}.bin"), str(data / name), *base]) == 0
    for kind in ("3d", "2d"):
        ck = root / f"{kind}.ckpt"
        assert main(["train", str(data), "--out", str(ck), "--epochs", "5", "--quiet", "--preset",
                     f"desk-{kind}", "--seed", "7", "--threads", "1"]) == 0
        out[ck.name] = ck.read_bytes()
    grid, rep = root / "pred.label", root / "report.csv"
    assert main(["infer", str(root / "3d.ckpt"), str(data / "scene_000.x3d.sst"), "--out", str(grid),
                 "--fuse", "--checkpoint-2d", str(root / "2d.ckpt"), *base]) == 0
    assert main(["eval", str(grid), str(data / "scene_000.label"), "--gt-invalid",
                 str(data / "scene_000.invalid"), "--format", "csv", "--out", str(rep), *base]) == 0
    for p in (grid, rep):
        out[p.name] = p.read_bytes()
    out["tensors"] = b"".join(p.read_bytes() for p in sorted(data.glob("*.sst")))
    return out


def test_c8_determinism(report, tmp_path, capsys):
    runs = []
    for i in range(2):
        root = tmp_path / f"run{i}"
        data = root / "data"
        data.mkdir(parents=True)
        g = GridGeometry.desk()
        for s in range(5):
            pc, grid = generate_synthetic_scene(random_scene_spec(s, g), s)
            write_scan(data / f"scene_{s:03d}.bin", pc)
            write_label_grid(grid, data / f"scene_{s:03d}.label", data / f"scene_{s:03d}.invalid")
        runs.append(_pipeline(root, data))
    capsys.readouterr()
    same = {k: runs[0][k] == runs[1][k] for k in runs[0]}
    assert report(8, all(same.values()), "bit-identical: " + ", ".join(f"{k} {v}" for k, v in same.items()))


# 9 ---------------------------------------------------------------------------

def test_c9_ftsdf_and_normals(report):
    rng = np.random.default_rng(9)
    s = np.concatenate([rng.uniform(0, 5, 2000), rng.uniform(0, 1e-3, 200), [0.0, 0.6, 1e-12]])
    tau = rng.uniform(0.05, 2.0, len(s))
    anti = all(ftsdf_value(a, t) == -ftsdf_value(-a, t) for a, t in zip(s, tau) if a != 0)
    cfg = ProjectionConfig()
    devs = {}
    for name, fn, n in (("wall", lambda p: 10.0 - p[..., 0], [-1, 0, 0]),
                        ("ground", lambda p: p[..., 2] + 1.7, [0, 0, 1])):
        nm = compute_normals(spherical_project(bisect_scan(cfg, fn), cfg).image)
        devs[name] = float(np.abs(nm.normals[nm.valid] - n).max())
    fracs = []
    for seed in range(8):
        proj = spherical_project(bisect_scan(cfg, smooth_surface(seed), 25.0), cfg)
        nm = compute_normals(proj.image)
        ref, okfit = plane_fit_normals(proj.image.unproject(), proj.image.valid)
        m = okfit & nm.valid
        cos = np.clip((nm.normals[m] * ref[m]).sum(axis=1), -1, 1)
        fracs.append(float(np.mean(np.degrees(np.arccos(cos)) < 5.0)))
    ok = anti and max(devs.values()) <= 1e-3 and min(fracs) >= 0.99
    assert report(9, ok, f"antisymmetry {anti}; wall {devs['wall']:.1e}, ground {devs['ground']:.1e}; "
                         f"plane-fit agreement min {min(fracs):.4f} over {len(fracs)} surfaces")
