#!/usr/bin/env python3
"""Solve a sparse SDPA (.dat-s) file with an external conic solver (Clarabel
through CVXPY) and print the optimal value.

The problem read is: minimize c'x subject to sum_k x_k F_k - F_0 PSD for
every block. In a diagonal (LP) block, pairs of consecutive rows whose
entries are exact negatives of each other are folded into one equality
row, which conic solvers handle far better than two opposite inequalities.
Likewise two PSD blocks F(x) and -F(x) force F(x) = 0 and become one
equality per upper-triangular entry.

Output is a single JSON object on stdout.
"""
import json
import re
import sys

import cvxpy as cp
import numpy as np


def read_sdpa(path):
    lines = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s or s[0] in '"*':
                continue
            lines.append(s)
    m = int(lines[0].split()[0])
    nblocks = int(lines[1].split()[0])
    sizes = [int(t) for t in re.split(r"[\s,(){}]+", lines[2]) if t][:nblocks]
    c = np.array([float(t) for t in re.split(r"[\s,(){}]+", lines[3]) if t][:m])
    entries = []
    for s in lines[4:]:
        k, b, i, j, v = s.split()[:5]
        entries.append((int(k), int(b) - 1, int(i) - 1, int(j) - 1, float(v)))
    return m, sizes, c, entries


def independent_rows(rows):
    """Drops equality rows that are linear combinations of earlier ones."""
    keep = []
    basis = np.zeros((0, rows.shape[1]))
    for r in rows:
        trial = np.vstack([basis, r])
        if np.linalg.matrix_rank(trial, tol=1e-10 * max(1.0, np.abs(trial).max())) > basis.shape[0]:
            basis = trial
            keep.append(r)
    return np.array(keep)


def main(path):
    m, sizes, c, entries = read_sdpa(path)
    dense = {}
    for b, size in enumerate(sizes):
        if size > 0:
            dense[b] = np.zeros((m + 1, size, size))
        else:
            dense[b] = np.zeros((m + 1, -size))
    for k, b, i, j, v in entries:
        if sizes[b] > 0:
            dense[b][k, i, j] += v
            if i != j:
                dense[b][k, j, i] += v
        else:
            dense[b][k, i] += v

    eq_rows, ineq_rows = [], []
    for b, size in enumerate(sizes):
        if size > 0:
            continue
        d = dense[b]
        i = 0
        while i < -size:
            if i + 1 < -size and np.array_equal(d[:, i], -d[:, i + 1]):
                eq_rows.append(d[:, i])
                i += 2
            else:
                ineq_rows.append(d[:, i])
                i += 1

    folded = set()
    for b, size in enumerate(sizes):
        if size <= 0 or b in folded:
            continue
        for b2 in range(b + 1, len(sizes)):
            if b2 not in folded and sizes[b2] == size and np.array_equal(dense[b], -dense[b2]):
                folded.update((b, b2))
                for i in range(size):
                    for j in range(i, size):
                        row = dense[b][:, i, j]
                        if np.any(row[1:] != 0):
                            eq_rows.append(row)
                break

    x = cp.Variable(m)
    cons = []
    if ineq_rows:
        rows = np.array(ineq_rows)
        cons.append(rows[:, 1:] @ x >= rows[:, 0])
    if eq_rows:
        rows = independent_rows(np.array(eq_rows))
        cons.append(rows[:, 1:] @ x == rows[:, 0])
    for b, size in enumerate(sizes):
        if size <= 0 or b in folded:
            continue
        d = dense[b]
        expr = -d[0] + sum(x[k - 1] * d[k] for k in range(1, m + 1) if np.any(d[k]))
        cons.append((expr + expr.T) / 2 >> 0)
    prob = cp.Problem(cp.Minimize(c @ x), cons)
    solver = sys.argv[2] if len(sys.argv) > 2 else "CLARABEL"
    opts = {"CLARABEL": {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10, "max_iter": 500}}.get(solver, {})
    prob.solve(solver=solver, **opts)
    print(json.dumps({
        "solver": solver,
        "status": prob.status,
        "value": prob.value,
        "equalities": len(eq_rows),
        "folded_blocks": len(folded),
    }))


if __name__ == "__main__":
    main(sys.argv[1])
