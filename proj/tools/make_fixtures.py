#!/usr/bin/env python3
"""Regenerates the bundled rig fixtures under data/rigs.

Each bone becomes an open tube of rings; ring vertices are skinned to the
bone's parent joint, blending linearly into the child joint along the bone.
"""

import json
import math
import pathlib
import sys

RING = 6
RINGS_PER_BONE = 3


def humanoid():
    j = [("pelvis", None, (0, 0.5, 0)), ("spine", 0, (0, 0.62, 0)), ("chest", 1, (0, 0.75, 0)),
         ("neck", 2, (0, 0.88, 0)), ("head", 3, (0, 0.95, 0))]
    for s, side in ((1, "_l"), (-1, "_r")):
        b = len(j)
        j += [("hip" + side, 0, (0.09 * s, 0.48, 0)), ("knee" + side, b, (0.09 * s, 0.26, 0.01)),
              ("ankle" + side, b + 1, (0.09 * s, 0.04, 0)), ("toe" + side, b + 2, (0.09 * s, 0.0, 0.08))]
    for s, side in ((1, "_l"), (-1, "_r")):
        b = len(j)
        j += [("shoulder" + side, 2, (0.17 * s, 0.82, 0)), ("elbow" + side, b, (0.19 * s, 0.62, 0)),
              ("wrist" + side, b + 1, (0.2 * s, 0.44, 0))]
    return j


def quadruped():
    j = [("pelvis", None, (0, 0.6, -0.4)), ("spine", 0, (0, 0.62, 0)), ("chest", 1, (0, 0.64, 0.4)),
         ("head", 2, (0, 0.8, 0.6))]
    for parent, z, tag in ((0, -0.4, "h"), (2, 0.4, "f")):
        for s in (1, -1):
            side = tag + ("l" if s > 0 else "r")
            b = len(j)
            j += [("hip_" + side, parent, (0.15 * s, 0.5, z)), ("knee_" + side, b, (0.15 * s, 0.25, z + 0.02)),
                  ("foot_" + side, b + 1, (0.15 * s, 0.0, z))]
    j.append(("tail1", 0, (0, 0.65, -0.6)))
    j.append(("tail2", len(j) - 1, (0, 0.7, -0.8)))
    return j


def lamp():
    return [("base", None, (0, 0, 0)), ("arm1", 0, (0, 0.4, 0.1)), ("arm2", 1, (0, 0.8, -0.1)),
            ("shade", 2, (0, 0.85, 0.1))]


def toy():
    return [("base", None, (0, 0, 0)), ("tip", 0, (0, 1, 0))]


def sub(a, b):
    return [a[i] - b[i] for i in range(3)]


def cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def unit(a):
    n = math.sqrt(sum(x * x for x in a))
    return [x / n for x in a]


def tube_mesh(joints, radius):
    verts, faces, weights = [], [], []
    for c, (_, parent, pc) in enumerate(joints):
        if parent is None:
            continue
        pp = joints[parent][2]
        d = unit(sub(pc, pp))
        helper = [1, 0, 0] if abs(d[0]) < 0.9 else [0, 1, 0]
        u = unit(cross(d, helper))
        v = cross(d, u)
        base = len(verts)
        for r in range(RINGS_PER_BONE):
            s = r / (RINGS_PER_BONE - 1)
            center = [pp[i] + s * (pc[i] - pp[i]) for i in range(3)]
            for k in range(RING):
                a = 2 * math.pi * k / RING
                verts.append([round(center[i] + radius * (math.cos(a) * u[i] + math.sin(a) * v[i]), 6)
                              for i in range(3)])
                wc = round(0.5 * s, 6)
                row = {str(parent): round(1 - wc, 6)}
                if wc > 0:
                    row[str(c)] = wc
                weights.append(row)
        for r in range(RINGS_PER_BONE - 1):
            for k in range(RING):
                a = base + r * RING + k
                b = base + r * RING + (k + 1) % RING
                faces.append([a, b, b + RING])
                faces.append([a, b + RING, a + RING])
    return verts, faces, weights


def write(out, name, joints, radius):
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    skel = {"format_version": "1.0",
            "joints": [{"name": n, "parent": p, "rest_position": list(pos)} for n, p, pos in joints]}
    verts, faces, weights = tube_mesh(joints, radius)
    (d / "skeleton.json").write_text(json.dumps(skel, indent=1) + "\n")
    with open(d / "mesh.obj", "w") as f:
        f.write(f"# {name} fixture\n")
        for v in verts:
            f.write("v %.6f %.6f %.6f\n" % tuple(v))
        for t in faces:
            f.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))
    (d / "weights.json").write_text(json.dumps({"format_version": "1.0", "weights": weights}) + "\n")
    manifest = {"format_version": "1.0", "skeleton": "skeleton.json", "mesh": "mesh.obj",
                "weights": "weights.json", "joints": len(joints), "vertices": len(verts)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/rigs")
    write(out, "biped", humanoid(), 0.03)
    write(out, "quadruped", quadruped(), 0.04)
    write(out, "lamp", lamp(), 0.04)
    write(out, "toy", toy(), 0.05)


if __name__ == "__main__":
    main()
