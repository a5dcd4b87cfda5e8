#!/usr/bin/env python3
"""Convert two-agent recordings into the mild dataset text format.

Input layout: one directory per class under ROOT. A demo is either a single
array file holding both agents side by side (split with --agent1-dim), or a
pair NAME_p1.EXT / NAME_p2.EXT with one agent each. Arrays are .npy or
whitespace/comma separated text, one frame per row.

Pairs of unequal length are aligned by linearly resampling the longer one to
the shorter length, the same rule as mild::dataio::align_and_downsample.
"""

import argparse
import pathlib
import sys

import numpy as np

SUFFIXES = (".npy", ".csv", ".txt")


def load_array(path):
    if path.suffix == ".npy":
        a = np.load(path)
    else:
        a = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{path}: expected a 2-d array, got shape {a.shape}")
    return a


def resample(a, n):
    if len(a) == n:
        return a
    src = np.linspace(0.0, len(a) - 1, n)
    cols = [np.interp(src, np.arange(len(a)), a[:, c]) for c in range(a.shape[1])]
    out = np.stack(cols, axis=1)
    out[0], out[-1] = a[0], a[-1]
    return out


def align(a, b):
    n = min(len(a), len(b))
    return resample(a, n), resample(b, n)


def parse_columns(text):
    return [int(x) for x in text.split(",") if x.strip()] if text else []


def collect(root, agent1_dim):
    demos = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in class_dir.iterdir() if p.suffix in SUFFIXES)
        seen = set()
        for f in files:
            stem = f.stem
            if stem.endswith("_p1") or stem.endswith("_p2"):
                base = stem[:-3]
                if base in seen:
                    continue
                seen.add(base)
                p1 = [p for p in files if p.stem == base + "_p1"]
                p2 = [p for p in files if p.stem == base + "_p2"]
                if len(p1) != 1 or len(p2) != 1:
                    raise ValueError(f"{f}: need exactly one _p1 and one _p2 file for {base}")
                a1, a2 = align(load_array(p1[0]), load_array(p2[0]))
                name = base
            else:
                if agent1_dim is None:
                    raise ValueError(f"{f}: single-file demos need --agent1-dim")
                both = load_array(f)
                a1, a2 = both[:, :agent1_dim], both[:, agent1_dim:]
                name = stem
            demos.append((class_dir.name, name, a1, a2))
    return demos


def subtract_origin(a, cols, width):
    # Columns are grouped in points of `width` coordinates; the reference point
    # is subtracted from every point.
    if not cols:
        return a
    ref = a[:, cols]
    out = a.copy()
    for start in range(0, a.shape[1], width):
        out[:, start:start + width] -= ref
    return out


def write(path, demos, frame_rate):
    with open(path, "w") as out:
        for label, name, a1, a2 in demos:
            if not (np.isfinite(a1).all() and np.isfinite(a2).all()):
                raise ValueError(f"{label}/{name}: non-finite values")
            out.write(f"# {name}\n")
            out.write(f"demo {label} {len(a1)} {a1.shape[1]} {a2.shape[1]} {frame_rate:g}\n")
            for r1, r2 in zip(a1, a2):
                out.write(" ".join(repr(float(v)) for v in np.concatenate([r1, r2])) + "\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("root", type=pathlib.Path)
    ap.add_argument("--out-prefix", required=True, help="writes PREFIX_train.txt and PREFIX_test.txt")
    ap.add_argument("--agent1-dim", type=int)
    ap.add_argument("--scale1", type=float, default=1.0, help="multiplier for agent 1 (e.g. 100 for m to cm)")
    ap.add_argument("--scale2", type=float, default=1.0)
    ap.add_argument("--origin1", default="", help="agent-1 reference columns, e.g. 0,1,2")
    ap.add_argument("--origin2", default="")
    ap.add_argument("--point-width", type=int, default=3, help="coordinates per point for origin subtraction")
    ap.add_argument("--frame-rate", type=float, default=40.0)
    ap.add_argument("--test-list", type=pathlib.Path, help="file of CLASS/NAME lines that go to the test split")
    ap.add_argument("--test-fraction", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    demos = []
    for label, name, a1, a2 in collect(args.root, args.agent1_dim):
        a1 = subtract_origin(a1 * args.scale1, parse_columns(args.origin1), args.point_width)
        a2 = subtract_origin(a2 * args.scale2, parse_columns(args.origin2), args.point_width)
        demos.append((label, name, a1, a2))
    if not demos:
        print(f"no demos found under {args.root}", file=sys.stderr)
        return 1

    if args.test_list:
        wanted = {line.strip() for line in args.test_list.read_text().splitlines() if line.strip()}
        is_test = [f"{label}/{name}" in wanted for label, name, _, _ in demos]
    else:
        rng = np.random.default_rng(args.seed)
        is_test = [False] * len(demos)
        for label in sorted({d[0] for d in demos}):
            idx = [i for i, d in enumerate(demos) if d[0] == label]
            n_test = int(round(args.test_fraction * len(idx)))
            for i in rng.permutation(idx)[:n_test]:
                is_test[i] = True

    train = [d for d, t in zip(demos, is_test) if not t]
    test = [d for d, t in zip(demos, is_test) if t]
    write(f"{args.out_prefix}_train.txt", train, args.frame_rate)
    write(f"{args.out_prefix}_test.txt", test, args.frame_rate)
    print(f"{len(train)} training and {len(test)} test demos")
    return 0


if __name__ == "__main__":
    sys.exit(main())
