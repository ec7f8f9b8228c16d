"""Time the compiled rasterizer against the numpy fallback on toy-model frames.

    python benchmarks/bench_raster.py [--frames N] [--repeat R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from shforge.body_model import toy_model
from shforge.camera import intrinsics_from_physical
from shforge.motion import chunk_clips, generate_test_motion
from shforge.renderer import BACKEND, KERNELS, ClipRenderer, rasterize_screen, to_screen
from shforge.scene_sampler import AssetBanks, sample_scene


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    model = toy_model()
    banks = AssetBanks()
    clip = chunk_clips(generate_test_motion(0, args.frames))[0]
    scene = sample_scene(0, 0, banks)
    intr = intrinsics_from_physical()
    renderer = ClipRenderer(model, clip, scene, banks, intr)
    faces = np.ascontiguousarray(model.faces, dtype=np.int64)
    screens = [to_screen(renderer.camera.to_camera(renderer.posed(t)[0]), intr) for t in range(clip.length)]

    print(f"default backend: {BACKEND}")
    print(f"mesh: {model.n_vertices} vertices, {len(faces)} faces, {intr.width}x{intr.height}")
    results = {}
    for name, kernel in sorted(KERNELS.items()):
        secs = _best(lambda: [rasterize_screen(s, faces, intr.width, intr.height, name) for s in screens],
                     args.repeat)
        results[name] = secs / len(screens)
        print(f"rasterize  {name:<7} {1e3 * results[name]:8.3f} ms/frame")
    if "cython" in results:
        print(f"speedup    {results['python'] / results['cython']:8.1f}x")
        same = True
        for s in screens:
            a = rasterize_screen(s, faces, intr.width, intr.height, "cython")
            b = rasterize_screen(s, faces, intr.width, intr.height, "python")
            same &= all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("face_id", "bary", "depth"))
        print(f"identical  {same}")

    for name in sorted(KERNELS):
        r = ClipRenderer(model, clip, scene, banks, intr, backend=name)
        secs = _best(lambda: [r.render(t) for t in range(clip.length)], args.repeat)
        print(f"full frame {name:<7} {1e3 * secs / clip.length:8.3f} ms/frame")


if __name__ == "__main__":
    main()
