"""Deterministically generate the 118-bus benchmark case (cases/bench118.m).

The file produced is a synthetic transmission network matched in scale to the
classic 118-bus test system: 118 buses, 186 branches, 54 generator buses,
ten zero-injection buses, ~4240 MW of load on a 100 MVA base. Branch
impedances, loads, and dispatch are drawn from a fixed-seed generator, the
topology is a Euclidean spanning tree plus short chords, and the result is
validated with the package power flow at 0.8x, 1.0x, and 1.2x loading before
being written. Rerunning this script reproduces the committed file exactly.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gridpse import powerflow
from gridpse.io import parse_matpower_subset
from gridpse.measurement import scale_loads

N_BUS = 118
N_BRANCH = 186
N_GEN = 54
SLACK_ID = 69
SEED = 118118

ZI_IDS = [9, 30, 37, 38, 63, 64, 68, 71, 81, 116]
SHUNT_IDS = [5, 34, 44, 45, 48, 74, 79, 82, 83, 105, 107, 110]


def build_topology(rng: np.random.Generator) -> list[tuple[int, int, float]]:
    pos = rng.uniform(0.0, 1.0, size=(N_BUS, 2))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))

    # Prim's MST keeps the graph connected.
    in_tree = {0}
    edges: list[tuple[int, int, float]] = []
    best = dist[0].copy()
    best_src = np.zeros(N_BUS, dtype=int)
    while len(in_tree) < N_BUS:
        cand = [(best[j], j) for j in range(N_BUS) if j not in in_tree]
        _, j = min(cand)
        edges.append((best_src[j], j, dist[best_src[j], j]))
        in_tree.add(j)
        closer = dist[j] < best
        best[closer] = dist[j][closer]
        best_src[closer] = j

    # Chords: shortest remaining pairs, bounded node degree.
    degree = np.zeros(N_BUS, dtype=int)
    have = set()
    for i, j, _ in edges:
        degree[i] += 1
        degree[j] += 1
        have.add((min(i, j), max(i, j)))
    pairs = sorted(
        ((dist[i, j], i, j) for i in range(N_BUS) for j in range(i + 1, N_BUS)),
        key=lambda t: t[0],
    )
    for d, i, j in pairs:
        if len(edges) >= N_BRANCH:
            break
        if (i, j) in have or degree[i] >= 9 or degree[j] >= 9:
            continue
        edges.append((i, j, d))
        have.add((i, j))
        degree[i] += 1
        degree[j] += 1
    return edges


def main() -> None:
    rng = np.random.default_rng(SEED)
    edges = build_topology(rng)
    mean_d = np.mean([d for _, _, d in edges])

    branch_rows = []
    for i, j, d in edges:
        x = float(np.clip(0.006 + 0.03 * (d / mean_d) * rng.uniform(0.85, 1.15), 0.006, 0.08))
        r = x / rng.uniform(3.5, 8.0)
        b = 0.25 * x
        branch_rows.append((i + 1, j + 1, r, x, b))

    gen_ids = sorted(rng.choice([b for b in range(1, N_BUS + 1) if b not in ZI_IDS],
                                size=N_GEN, replace=False).tolist())
    if SLACK_ID not in gen_ids:
        gen_ids[-1] = SLACK_ID
        gen_ids = sorted(set(gen_ids))
        while len(gen_ids) < N_GEN:
            extra = int(rng.integers(1, N_BUS + 1))
            if extra not in gen_ids and extra not in ZI_IDS:
                gen_ids.append(extra)
                gen_ids = sorted(gen_ids)

    loads = {}
    for b in range(1, N_BUS + 1):
        if b in ZI_IDS:
            continue
        pd = rng.uniform(8.0, 55.0)
        pf = rng.uniform(0.97, 0.995)
        loads[b] = (pd, pd * np.tan(np.arccos(pf)))
    total_pd = sum(p for p, _ in loads.values())
    scale = 4242.0 / total_pd
    loads = {b: (p * scale, q * scale) for b, (p, q) in loads.items()}
    total_pd = 4242.0

    shares = rng.uniform(0.5, 1.5, size=N_GEN - 1)
    shares /= shares.sum()
    dispatch_total = 1.02 * total_pd
    gen_rows = []
    for b, share in zip([g for g in gen_ids if g != SLACK_ID], shares):
        vg = rng.uniform(1.01, 1.05)
        gen_rows.append((b, dispatch_total * share * 0.9, vg))
    gen_rows.append((SLACK_ID, dispatch_total * 0.1, 1.035))
    gen_rows.sort()

    shunts = {b: float(rng.uniform(8.0, 22.0)) for b in SHUNT_IDS}

    lines = ["function mpc = bench118",
             "% 118-bus synthetic transmission benchmark (classic 118-bus scale:",
             "% 118 buses, 186 branches, 54 generator buses, 10 zero-injection buses,",
             "% 4242 MW load). Generated deterministically by scripts/gen_bench118.py.",
             "mpc.version = '2';",
             "mpc.baseMVA = 100;",
             "",
             "%% bus data",
             "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
             "mpc.bus = ["]
    gen_set = set(g for g, _, _ in gen_rows)
    for b in range(1, N_BUS + 1):
        if b == SLACK_ID:
            btype = 3
        elif b in gen_set:
            btype = 2
        else:
            btype = 1
        pd, qd = loads.get(b, (0.0, 0.0))
        bs = shunts.get(b, 0.0)
        lines.append(f"\t{b}\t{btype}\t{pd:.2f}\t{qd:.2f}\t0\t{bs:.2f}\t1\t1\t0\t138\t1\t1.06\t0.94;")
    lines += ["];", "", "%% generator data",
              "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
              "mpc.gen = ["]
    for b, pg, vg in gen_rows:
        lines.append(f"\t{b}\t{pg:.2f}\t0\t300\t-300\t{vg:.4f}\t100\t1\t{pg * 2 + 100:.0f}\t0;")
    lines += ["];", "", "%% branch data",
              "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus",
              "mpc.branch = ["]
    for f, t, r, x, b in branch_rows:
        lines.append(f"\t{f}\t{t}\t{r:.5f}\t{x:.5f}\t{b:.5f}\t0\t0\t0\t0\t0\t1;")
    lines += ["];", ""]
    text = "\n".join(lines)

    network = parse_matpower_subset(text)
    for factor in (0.8, 1.0, 1.2):
        point = powerflow.solve_powerflow(scale_loads(network, factor), tolerance=1e-10)
        vm = point.magnitude
        print(f"scale {factor}: {point.iterations} iters, "
              f"|V| in [{vm.min():.4f}, {vm.max():.4f}]")
        assert 0.90 <= vm.min() and vm.max() <= 1.10, "voltage profile out of range"

    out = Path(__file__).resolve().parents[1] / "src" / "gridpse" / "cases" / "bench118.m"
    out.write_text(text)
    zi = [b.id for b in network.buses if b.kind.value == "zero_injection"]
    print(f"wrote {out} ({len(network.branches)} branches, ZI buses {zi})")


if __name__ == "__main__":
    main()
