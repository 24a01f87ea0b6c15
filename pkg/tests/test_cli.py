import json

import numpy as np
import pytest

from sparsessc.cli import export_points, main
from sparsessc.geometry import GridGeometry, ProjectionConfig
from sparsessc.scene_io import (CLASS_IDS, Box, DenseLabelGrid, Plane, PointCloud, SceneSpec,
                                generate_synthetic_scene, read_label_grid, write_label_grid, write_scan)
from sparsessc.sparse.tensor_io import read_tensor

TINY = """\
geometry.origin = 0.0, -1.6, -2.0
geometry.dims = 24, 16, 8
features.height = 32
features.width = 256
net.channels = 4, 4, 8, 8, 8
net.spn_hidden = 4
train.optimizer = adam
train.lr = 0.01
train.weight_decay = 0
"""
TINY_GEOM = GridGeometry(origin=(0.0, -1.6, -2.0), dims=(24, 16, 8))


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    data = tmp_path / "data"
    data.mkdir()
    for i in range(2):
        spec = SceneSpec((Plane(-1.5, CLASS_IDS["road"]),
                          Box((3.0, -0.6 + 0.2 * i, -1.5), (4.0, 0.6 + 0.2 * i, -0.5), CLASS_IDS["car"])),
                         TINY_GEOM, ProjectionConfig(32, 256))
        pc, grid = generate_synthetic_scene(spec)
        write_scan(data / f"s{i}.bin", pc)
        write_label_grid(grid, data / f"s{i}.label", data / f"s{i}.invalid")
    return tmp_path, str(cfg), data


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["train", str(tmp_path), "--out", "x", "--preset", "nope"]) == 2
    assert main(["infer", "c.ckpt", "s.bin", "--out", "o", "--fuse"]) == 2
    assert "--checkpoint-2d" in capsys.readouterr().err


def test_missing_and_corrupt_files_exit_3(tmp_path, capsys):
    assert main(["preprocess", str(tmp_path / "none.bin"), str(tmp_path / "o")]) == 3
    (tmp_path / "bad.bin").write_bytes(b"\0" * 7)
    assert main(["preprocess", str(tmp_path / "bad.bin"), str(tmp_path / "o")]) == 3
    assert "bad.bin" in capsys.readouterr().err


def test_default_preprocess_grid(tmp_path):
    g = GridGeometry()
    ijk = np.array([[0, 0, 0], [255, 255, 31], [128, 10, 20], [255, 0, 31]])
    xyz = g.centers(ijk)
    pts = np.column_stack([np.vstack([xyz, [[60.0, 0, 0], [-1.0, 0, 0]]]), np.full(6, 0.5)])
    write_scan(tmp_path / "s.bin", PointCloud(pts))
    assert main(["preprocess", str(tmp_path / "s.bin"), str(tmp_path / "s")]) == 0
    x3, x2 = read_tensor(tmp_path / "s.x3d.sst"), read_tensor(tmp_path / "s.x2d.sst")
    occ = x3.coords[x3.feats.data[:, 5] > 0]
    assert sorted(map(tuple, occ.tolist())) == sorted(map(tuple, ijk.tolist()))
    assert x3.stride == (1, 1, 1) and x3.coords.max(axis=0).tolist() <= [255, 255, 31]
    assert sorted(map(tuple, x2.coords.tolist())) == sorted({(i, j) for i, j, _ in ijk.tolist()})


def test_preprocess_empty_scan_and_rerun(tmp_path):
    write_scan(tmp_path / "e.bin", PointCloud.empty())
    assert main(["preprocess", str(tmp_path / "e.bin"), str(tmp_path / "e"), "--debug"]) == 0
    assert len(read_tensor(tmp_path / "e.x3d.sst")) == 0
    first = (tmp_path / "e.x3d.sst").read_bytes()
    assert main(["preprocess", str(tmp_path / "e.bin"), str(tmp_path / "e")]) == 0
    assert (tmp_path / "e.x3d.sst").read_bytes() == first
    assert (tmp_path / "e.range.dump").exists()


def test_pipeline(workspace, capsys):
    root, cfg, data = workspace
    base = ["--config", cfg, "--seed", "3"]
    ck3, ck2 = str(root / "n3.ckpt"), str(root / "n2.ckpt")
    assert main(["train", str(data), "--out", ck3, "--epochs", "2", "--log", str(root / "l.jsonl"),
                 "--quiet", *base]) == 0
    assert main(["train", str(data), "--out", ck2, "--epochs", "2", "--network", "2d", "--quiet", *base]) == 0
    lines = [json.loads(t) for t in (root / "l.jsonl").read_text().splitlines()]
    assert lines[0]["epoch"] == 0 and "loss" in lines[0]

    assert main(["preprocess", str(data / "s0.bin"), str(root / "s0"), *base]) == 0
    out3, outf = str(root / "p3.label"), str(root / "pf.label")
    assert main(["infer", ck3, str(root / "s0.x3d.sst"), "--out", out3, *base]) == 0
    assert main(["infer", ck3, str(data / "s0.bin"), "--out", outf, "--fuse", "--checkpoint-2d", ck2,
                 *base]) == 0
    a, b = read_label_grid(out3, None, TINY_GEOM), read_label_grid(outf, None, TINY_GEOM)
    assert (b.labels > 0).sum() >= (a.labels > 0).sum()
    # wrong network kind
    assert main(["infer", ck2, str(data / "s0.bin"), "--out", out3, *base]) == 3

    capsys.readouterr()
    rep = str(root / "r.csv")
    assert main(["eval", str(data / "s0.label"), str(data / "s0.label"), "--format", "csv",
                 "--out", rep, *base]) == 0
    vals = open(rep).read().splitlines()[1].split(",")
    assert vals[0] == "1.000000" and vals[1] == "1.000000"
    assert main(["eval", out3, str(data / "s0.label"), "--gt-invalid", str(data / "s0.invalid"),
                 *base]) == 0
    assert "completion IoU" in capsys.readouterr().out


def test_eval_empty_prediction_and_dim_mismatch(workspace, capsys):
    root, cfg, data = workspace
    empty = DenseLabelGrid(np.zeros(TINY_GEOM.dims, int), np.zeros(TINY_GEOM.dims, bool), TINY_GEOM)
    write_label_grid(empty, root / "e.label")
    assert main(["eval", str(root / "e.label"), str(data / "s0.label"), "--format", "csv",
                 "--config", cfg]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("0.000000")
    assert main(["eval", str(root / "e.label"), str(data / "s0.label")]) == 3


def test_export(tmp_path):
    g = GridGeometry(origin=(0.0, 0.0, 0.0), dims=(2, 2, 2))
    labels = np.zeros(g.dims, int)
    assert export_points(DenseLabelGrid(labels, np.zeros(g.dims, bool), g)) == ""
    labels[0, 0, 0] = 9
    assert export_points(DenseLabelGrid(labels, np.zeros(g.dims, bool), g)) == "0.1000 0.1000 0.1000 9\n"
    cfg = tmp_path / "g.cfg"
    cfg.write_text("geometry.origin = 0, 0, 0\ngeometry.dims = 2, 2, 2\n")
    src = DenseLabelGrid(labels, np.zeros(g.dims, bool), g)
    write_label_grid(src, tmp_path / "a.label")
    assert main(["export", str(tmp_path / "a.label"), "--format", "raw", "--out", str(tmp_path / "b.label"),
                 "--config", str(cfg)]) == 0
    assert (tmp_path / "b.label").read_bytes() == (tmp_path / "a.label").read_bytes()
    assert main(["export", str(tmp_path / "a.label"), "--out", str(tmp_path / "p.txt"),
                 "--config", str(cfg)]) == 0
    assert (tmp_path / "p.txt").read_text() == "0.1000 0.1000 0.1000 9\n"


def test_selfcheck_single_suite(capsys):
    assert main(["selfcheck", "--suite", "metrics", "--suite", "checkpoint"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2 and all(line.startswith("PASS") for line in out)
