#!/usr/bin/env python3
"""Write a directory of synthetic street scenes (scan + label grid) for desk-scale runs."""
import argparse
from pathlib import Path

from sparsessc.geometry import GridGeometry
from sparsessc.scene_io import generate_synthetic_scene, random_scene_spec, write_label_grid, write_scan


def make_dataset(out, n_scenes: int = 5, seed: int = 0, full_grid: bool = False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    geometry = GridGeometry() if full_grid else GridGeometry.desk()
    paths = []
    for i in range(n_scenes):
        spec = random_scene_spec(seed + i, geometry)
        pc, grid = generate_synthetic_scene(spec, seed + i)
        stem = out / f"scene_{i:03d}"
        write_scan(f"{stem}.bin", pc)
        write_label_grid(grid, f"{stem}.label", f"{stem}.invalid")
        paths.append(stem)
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--scenes", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-grid", action="store_true", help="256 x 256 x 32 instead of 64 x 64 x 16")
    args = ap.parse_args()
    for stem in make_dataset(args.out, args.scenes, args.seed, args.full_grid):
        print(stem)


if __name__ == "__main__":
    main()
