"""Walk through the mask stack for one synthetic scene.

Builds the binary, scale, and attention masks that weight the feature loss,
and prints the invariants each of them satisfies.  Writes text grids and PGM
renderings next to this script under demo_out/.
"""

import os

import numpy as np

from fgdistill import (
    LevelGeometry,
    SceneConfig,
    Tensor,
    binary_mask,
    build_masks,
    generate_scene,
    init_toynet,
    project_boxes,
    scale_mask,
)
from fgdistill.fileio import write_grid, write_pgm

OUT = os.path.join(os.path.dirname(__file__), "demo_out", "masks")


def show(name, grid):
    print(f"\n{name} (shape {grid.shape}):")
    for row in np.asarray(grid):
        print("  " + " ".join(f"{v:7.4f}" for v in row))


def main():
    scene = generate_scene(SceneConfig(image_size=16, max_rects=2, min_rects=2), seed=4)
    print(f"scene with boxes: {scene.boxes.boxes}")

    geom = LevelGeometry(stride=4, feature_h=4, feature_w=4)
    rects = project_boxes(scene.boxes, geom)
    print(f"projected to feature cells: {rects}")

    m = binary_mask(rects, 4, 4)
    show("binary mask M", m)
    print(f"M + (1-M) is all ones: {np.array_equal(m + (1 - m), np.ones((4, 4)))}")

    s = scale_mask(rects, 4, 4)
    show("scale mask S", s)
    print(f"background weights sum to {s[m == 0].sum():.12f}")
    for r in rects:
        box_sum = s[r.row0 : r.row1, r.col0 : r.col1].sum()
        print(f"  sum of S over {r}: {box_sum:.12f}")

    # attention masks come from a (here untrained) teacher's features
    teacher = init_toynet(8, np.random.default_rng(0), name="demo_teacher")
    features = teacher.forward(Tensor(scene.image))[1]  # stride-4 level
    masks = build_masks(features, scene.boxes, geom, temperature=0.5)
    show("spatial attention A^S", masks.spatial_attn)
    print(f"sum(A^S) = {masks.spatial_attn.sum():.10f} (grid has {4 * 4} cells)")
    print(f"channel attention A^C = {np.round(masks.channel_attn, 4)}")
    print(f"sum(A^C) = {masks.channel_attn.sum():.10f} ({8} channels)")

    os.makedirs(OUT, exist_ok=True)
    write_grid(os.path.join(OUT, "binary.txt"), masks.binary)
    write_grid(os.path.join(OUT, "scale.txt"), masks.scale)
    write_grid(os.path.join(OUT, "spatial_attn.txt"), masks.spatial_attn)
    write_pgm(os.path.join(OUT, "spatial_attn.pgm"), masks.spatial_attn)
    print(f"\ngrids and PGM written to {OUT}")


if __name__ == "__main__":
    main()
