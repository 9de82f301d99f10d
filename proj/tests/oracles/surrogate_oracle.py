#!/usr/bin/env python3
"""Independent evaluation of the closed-form surrogate pillar maps.

Writes the golden files used by the C++ tests:
  surrogate_action0_12x32.txt   src_index of action 0, one integer per line
  inlet_action0_12x32.txt       default inlet after action 0, one row of 0/1 per line
  surrogate_library_12x32.txt   all 32 maps, one line per action: "<id> <idx> <idx> ..."
  oracle_facts_12x32.txt        "key value" lines: FNV-1a digests and the non-commuting pairs

Usage: surrogate_oracle.py OUTPUT_DIR
"""

import math
import struct
import sys
from pathlib import Path

H, W = 12, 32
AMPLITUDE_STEP = 0.05
WIDTH = 0.15
EDGE_EPS = 1e-9


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def surrogate_map(action: int, h: int = H, w: int = W) -> list[int]:
    position, strength = action % 4, action // 4
    center = 0.125 + 0.25 * position
    amplitude = AMPLITUDE_STEP * (strength + 1)
    out = []
    for i in range(h):
        z = (i + 0.5) / h
        shear = math.sin(2.0 * math.pi * z)
        for j in range(w):
            y = (j + 0.5) / w
            dy = y - center
            y_src = y - amplitude * shear * math.exp(-(dy * dy) / (2.0 * WIDTH * WIDTH))
            y_src = min(max(y_src, 0.0), 1.0 - EDGE_EPS)
            col = min(max(round_half_away(y_src * w - 0.5), 0), w - 1)
            out.append(i * w + col)
    return out


def inlet(h: int = H, w: int = W, lo: float = 0.375, hi: float = 0.625) -> list[int]:
    a, b = math.floor(lo * w), math.floor(hi * w)
    return [1 if a <= j < b else 0 for i in range(h) for j in range(w)]


def fnv1a(h: int, w: int, pixels: list[int]) -> int:
    x = 0xCBF29CE484222325
    for c in struct.pack("<II", h, w) + bytes(pixels):
        x = ((x ^ c) * 0x100000001B3) % 2**64
    return x


def gather(shape: list[int], m: list[int]) -> list[int]:
    return [shape[s] for s in m]


def facts() -> list[str]:
    src = inlet()
    maps = [surrogate_map(a) for a in range(32)]
    pairs = [(a, b) for a in range(32) for b in range(32)
             if gather(gather(src, maps[a]), maps[b]) != gather(gather(src, maps[b]), maps[a])]
    s = gather(gather(src, maps[30]), maps[11])
    return [
        f"inlet_hash {fnv1a(H, W, src):016x}",
        f"seq_30_11_hash {fnv1a(H, W, s):016x}",
        f"seq_30_11_on {sum(s)}",
        f"noncommuting_pairs {len(pairs)}",
        f"first_noncommuting {pairs[0][0]} {pairs[0][1]}",
    ]


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    out.mkdir(parents=True, exist_ok=True)
    m0 = surrogate_map(0)
    (out / "surrogate_action0_12x32.txt").write_text("".join(f"{s}\n" for s in m0))
    src = inlet()
    shaped = [src[s] for s in m0]
    rows = ["".join(str(p) for p in shaped[i * W:(i + 1) * W]) for i in range(H)]
    (out / "inlet_action0_12x32.txt").write_text("".join(r + "\n" for r in rows))
    lines = [" ".join([str(a)] + [str(s) for s in surrogate_map(a)]) for a in range(32)]
    (out / "surrogate_library_12x32.txt").write_text("".join(l + "\n" for l in lines))
    (out / "oracle_facts_12x32.txt").write_text("".join(f + "\n" for f in facts()))


if __name__ == "__main__":
    main()
