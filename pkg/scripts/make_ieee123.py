"""Write the simplified 123-bus feeder file shipped in ``src/evfdia/data``.

The IEEE 123-node test feeder is unbalanced and three-phase. This script
reduces it to a balanced single-phase equivalent:

* one node per original bus; the substation bus 150 becomes bus 1;
* every line uses an approximate positive-sequence impedance for its
  configuration (self minus average mutual for three- and two-phase
  overhead, conductor self impedance for single-phase laterals);
* spot loads are summed over phases;
* regulators and closed switches become short lines, open switches,
  the 61-610 transformer and the dangling switch nodes are dropped,
  and capacitor banks are ignored.

Usage: python scripts/make_ieee123.py [output path]
"""

import sys
from pathlib import Path

# ohm per mile, balanced approximation per line configuration
CONFIG_Z = {
    **{c: (0.306, 0.641) for c in (1, 2, 3, 4, 5, 6)},
    7: (0.304, 0.693),
    8: (0.304, 0.693),
    **{c: (1.329, 1.348) for c in (9, 10, 11)},
    12: (1.001, 0.475),
}
SWITCH = (50, 1)  # closed switches and regulators: 50 ft of configuration 1

# (from, to, length ft, configuration)
LINES = [
    (1, 2, 175, 10), (1, 3, 250, 11), (1, 7, 300, 1), (3, 4, 200, 11), (3, 5, 325, 11),
    (5, 6, 250, 11), (7, 8, 200, 1), (8, 12, 225, 10), (8, 9, 225, 9), (8, 13, 300, 1),
    (9, 14, 425, 9), (13, 34, 150, 11), (13, 18, 825, 2), (14, 11, 250, 9), (14, 10, 250, 9),
    (15, 16, 375, 11), (15, 17, 350, 11), (18, 19, 250, 9), (18, 21, 300, 2), (19, 20, 325, 9),
    (21, 22, 525, 10), (21, 23, 250, 2), (23, 24, 550, 11), (23, 25, 275, 2), (25, 26, 350, 7),
    (25, 28, 200, 2), (26, 27, 275, 7), (26, 31, 225, 11), (27, 33, 500, 9), (28, 29, 300, 2),
    (29, 30, 350, 2), (30, 250, 200, 2), (31, 32, 300, 11), (34, 15, 100, 11), (35, 36, 650, 8),
    (35, 40, 250, 1), (36, 37, 300, 9), (36, 38, 250, 10), (38, 39, 325, 10), (40, 41, 325, 11),
    (40, 42, 250, 1), (42, 43, 500, 10), (42, 44, 200, 1), (44, 45, 200, 9), (44, 47, 250, 1),
    (45, 46, 300, 9), (47, 48, 150, 4), (47, 49, 250, 4), (49, 50, 250, 4), (50, 51, 250, 4),
    (52, 53, 200, 1), (53, 54, 125, 1), (54, 55, 275, 1), (54, 57, 350, 3), (55, 56, 275, 1),
    (57, 58, 250, 10), (57, 60, 750, 3), (58, 59, 250, 10), (60, 61, 550, 5), (60, 62, 250, 12),
    (62, 63, 175, 12), (63, 64, 350, 12), (64, 65, 425, 12), (65, 66, 325, 12), (67, 68, 200, 9),
    (67, 72, 275, 3), (67, 97, 250, 3), (68, 69, 275, 9), (69, 70, 325, 9), (70, 71, 275, 9),
    (72, 73, 275, 11), (72, 76, 200, 3), (73, 74, 350, 11), (74, 75, 400, 11), (76, 77, 400, 6),
    (76, 86, 700, 3), (77, 78, 100, 6), (78, 79, 225, 6), (78, 80, 475, 6), (80, 81, 475, 6),
    (81, 82, 250, 6), (81, 84, 675, 11), (82, 83, 250, 6), (84, 85, 475, 11), (86, 87, 450, 6),
    (87, 88, 175, 9), (87, 89, 275, 6), (89, 90, 225, 10), (89, 91, 225, 6), (91, 92, 300, 11),
    (91, 93, 225, 6), (93, 94, 275, 9), (93, 95, 300, 6), (95, 96, 200, 10), (97, 98, 275, 3),
    (98, 99, 550, 3), (99, 100, 300, 3), (100, 450, 800, 3), (101, 102, 225, 11), (101, 105, 275, 3),
    (102, 103, 325, 11), (103, 104, 700, 11), (105, 106, 225, 10), (105, 108, 325, 3),
    (106, 107, 575, 10), (108, 109, 450, 9), (108, 300, 1000, 3), (109, 110, 300, 9),
    (110, 111, 575, 9), (110, 112, 125, 9), (112, 113, 525, 9), (113, 114, 325, 9),
    (135, 35, 375, 4), (149, 1, 400, 1), (152, 52, 400, 1), (160, 67, 350, 6), (197, 101, 250, 3),
]
SWITCHES = [(150, 149), (13, 152), (18, 135), (60, 160), (97, 197)]

# node: total kW, total kvar over phases
LOADS = {
    1: (40, 20), 2: (20, 10), 4: (40, 20), 5: (20, 10), 6: (40, 20), 7: (20, 10), 9: (40, 20),
    10: (20, 10), 11: (40, 20), 12: (20, 10), 16: (40, 20), 17: (20, 10), 19: (40, 20),
    20: (40, 20), 22: (40, 20), 24: (40, 20), 28: (40, 20), 29: (40, 20), 30: (40, 20),
    31: (20, 10), 32: (20, 10), 33: (40, 20), 34: (40, 20), 35: (40, 20), 37: (40, 20),
    38: (20, 10), 39: (20, 10), 41: (20, 10), 42: (20, 10), 43: (40, 20), 45: (20, 10),
    46: (20, 10), 47: (105, 75), 48: (210, 150), 49: (140, 95), 50: (40, 20), 51: (20, 10),
    52: (40, 20), 53: (40, 20), 55: (20, 10), 56: (20, 10), 58: (20, 10), 59: (20, 10),
    60: (20, 10), 62: (40, 20), 63: (40, 20), 64: (75, 35), 65: (140, 100), 66: (75, 35),
    68: (20, 10), 69: (40, 20), 70: (20, 10), 71: (40, 20), 73: (40, 20), 74: (40, 20),
    75: (40, 20), 76: (245, 180), 77: (40, 20), 79: (40, 20), 80: (40, 20), 82: (40, 20),
    83: (20, 10), 84: (20, 10), 85: (40, 20), 86: (20, 10), 87: (40, 20), 88: (40, 20),
    90: (40, 20), 92: (40, 20), 94: (40, 20), 95: (20, 10), 96: (20, 10), 98: (40, 20),
    99: (40, 20), 100: (40, 20), 102: (20, 10), 103: (40, 20), 104: (40, 20), 106: (40, 20),
    107: (40, 20), 109: (40, 20), 111: (20, 10), 112: (20, 10), 113: (40, 20), 114: (20, 10),
}

# placement defaults, in original node names
PMU = [13, 18, 26, 35, 44, 54, 60, 67, 76, 101]
EVCS = [114, 96]  # no base load at station buses
MONITOR = [114, 111, 96, 85, 66]

BASE_KV, BASE_MVA = 4.16, 10.0


def build():
    lines = [(a, b, *_impedance(ft, cfg)) for a, b, ft, cfg in LINES]
    lines += [(a, b, *_impedance(*SWITCH)) for a, b in SWITCHES]
    # renumber breadth-first from the substation
    adj = {}
    for a, b, *_ in lines:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    order, seen = [150], {150}
    for node in order:
        for nb in sorted(adj[node]):
            if nb not in seen:
                seen.add(nb)
                order.append(nb)
    if len(order) != len(adj) or len(lines) != len(adj) - 1:
        raise RuntimeError("line table is not a connected tree")
    idx = {node: i + 1 for i, node in enumerate(order)}
    return order, idx, lines


def _impedance(feet, cfg):
    r, x = CONFIG_Z[cfg]
    miles = feet / 5280.0
    return r * miles, x * miles


def render():
    order, idx, lines = build()
    out = [
        "# Simplified IEEE 123-node test feeder: balanced single-phase equivalent.",
        "# Generated by scripts/make_ieee123.py; see data/README.md for the reduction.",
        "# Impedances in ohm, loads in kW / kvar summed over phases.",
        "# Bus numbering is breadth-first from the substation; original node names",
        "# are given in the trailing comments.",
        f"N {len(order)} SLACK 1 BASEKV {BASE_KV} BASEMVA {BASE_MVA:g}",
    ]
    for a, b, r, x in sorted(lines, key=lambda l: (min(idx[l[0]], idx[l[1]]), max(idx[l[0]], idx[l[1]]))):
        i, j = sorted((idx[a], idx[b]))
        na, nb = (a, b) if idx[a] < idx[b] else (b, a)
        out.append(f"LINE {i} {j} {r:.6f} {x:.6f}  # {na}-{nb}")
    for node in sorted(LOADS, key=lambda n: idx[n]):
        if node in EVCS:
            continue
        p, q = LOADS[node]
        out.append(f"LOAD {idx[node]} {p} {q}  # {node}")
    out += [f"PMU {idx[n]}  # {n}" for n in PMU]
    out += [f"EVCS {idx[n]}  # {n}" for n in EVCS]
    out += [f"MONITOR {idx[n]}  # {n}" for n in MONITOR]
    return "\n".join(out) + "\n"


if __name__ == "__main__":
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src" / "evfdia" / "data" / "ieee123.feeder")
    dest.write_text(render())
    print(f"wrote {dest}")
