"""Grid kernels: priority-flood filling, D8 routing, topological ordering.

Every kernel works on flattened row-major cell indices so that numba sees
only flat arrays.  Direction codes: 0..7 = N, NE, E, SE, S, SW, W, NW,
``OUTLET`` = 8, ``NODATA`` = -1.
"""

import heapq

import numpy as np

from .._accel import jit

OUTLET = 8
NODATA = -1
FLAT = -2  # transient marker, never returned

DROW = np.array([-1, -1, 0, 1, 1, 1, 0, -1], dtype=np.int64)
DCOL = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
DIST = np.array([1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0)])


@jit
def priority_flood(z, valid, rows, cols):
    """Raise every cell to the lowest spill elevation on a path to the edge.

    Seeds are valid cells on the grid border or beside nodata; they keep
    their elevation.  ``z`` and ``valid`` are flat arrays.
    """
    drow = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    dcol = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    n = rows * cols
    out = z.copy()
    closed = np.zeros(n, dtype=np.bool_)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for i in range(n):
        if not valid[i]:
            continue
        r = i // cols
        c = i % cols
        seed = r == 0 or c == 0 or r == rows - 1 or c == cols - 1
        if not seed:
            for k in range(8):
                if not valid[(r + drow[k]) * cols + c + dcol[k]]:
                    seed = True
                    break
        if seed:
            closed[i] = True
            heapq.heappush(heap, (out[i], np.int64(i)))
    while len(heap) > 0:
        e, i = heapq.heappop(heap)
        r = i // cols
        c = i % cols
        for k in range(8):
            rr = r + drow[k]
            cc = c + dcol[k]
            if rr < 0 or cc < 0 or rr >= rows or cc >= cols:
                continue
            j = rr * cols + cc
            if closed[j] or not valid[j]:
                continue
            closed[j] = True
            if out[j] < e:
                out[j] = e
            heapq.heappush(heap, (out[j], np.int64(j)))
    return out


def _steepest_numpy(z, valid, rows, cols):
    """Vectorised steepest-descent pass; same contract as ``steepest_descent``."""
    zz = z.reshape(rows, cols)
    vv = valid.reshape(rows, cols)
    pz = np.full((rows + 2, cols + 2), np.nan)
    pz[1:-1, 1:-1] = zz
    pv = np.zeros((rows + 2, cols + 2), dtype=bool)
    pv[1:-1, 1:-1] = vv
    ingrid = np.zeros((rows + 2, cols + 2), dtype=bool)
    ingrid[1:-1, 1:-1] = True

    best = np.zeros((rows, cols))
    dirs = np.full((rows, cols), FLAT, dtype=np.int8)
    beside_nodata = np.zeros((rows, cols), dtype=bool)
    for k in range(8):
        sl = (slice(1 + DROW[k], rows + 1 + DROW[k]), slice(1 + DCOL[k], cols + 1 + DCOL[k]))
        beside_nodata |= ingrid[sl] & ~pv[sl]
        with np.errstate(invalid="ignore"):
            drop = (zz - pz[sl]) / DIST[k]
        better = pv[sl] & (drop > best)
        best = np.where(better, drop, best)
        dirs[better] = k
    border = np.zeros((rows, cols), dtype=bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    dirs[(dirs == FLAT) & border] = OUTLET
    dirs[beside_nodata] = OUTLET
    dirs[~vv] = NODATA
    return dirs.ravel()


@jit(fallback=_steepest_numpy)
def steepest_descent(z, valid, rows, cols):
    """D8 pointer to the neighbour with the largest drop per unit distance.

    Ties go to the lowest scan index.  Cells beside nodata are outlets;
    border cells with no lower neighbour are outlets; remaining cells with
    no lower neighbour are marked ``FLAT`` for ``resolve_flats``.
    """
    drow = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    dcol = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    dist = np.array([1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0)])
    n = rows * cols
    dirs = np.empty(n, dtype=np.int8)
    for i in range(n):
        if not valid[i]:
            dirs[i] = -1
            continue
        r = i // cols
        c = i % cols
        best = 0.0
        d = -2
        coastal = False
        for k in range(8):
            rr = r + drow[k]
            cc = c + dcol[k]
            if rr < 0 or cc < 0 or rr >= rows or cc >= cols:
                continue
            j = rr * cols + cc
            if not valid[j]:
                coastal = True
                continue
            drop = (z[i] - z[j]) / dist[k]
            if drop > best:
                best = drop
                d = k
        if coastal:
            d = 8
        elif d == -2 and (r == 0 or c == 0 or r == rows - 1 or c == cols - 1):
            d = 8
        dirs[i] = d
    return dirs


@jit
def resolve_flats(z, dirs, rows, cols):
    """Point each flat cell one step along the shortest path to a drained cell.

    Breadth-first distances are measured through cells of equal elevation,
    starting from every cell that already drains.  A flat cell picks the
    equal-elevation neighbour one step closer, lowest scan index first.
    Flat cells with no route (undrained pits) become outlets.
    """
    drow = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    dcol = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    n = rows * cols
    out = dirs.copy()
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    any_flat = False
    for i in range(n):
        if out[i] == -2:
            any_flat = True
        elif out[i] >= 0:
            dist[i] = 0
            queue[tail] = i
            tail += 1
    if not any_flat:
        return out
    while head < tail:
        i = queue[head]
        head += 1
        r = i // cols
        c = i % cols
        for k in range(8):
            rr = r + drow[k]
            cc = c + dcol[k]
            if rr < 0 or cc < 0 or rr >= rows or cc >= cols:
                continue
            j = rr * cols + cc
            if out[j] == -2 and dist[j] < 0 and z[j] == z[i]:
                dist[j] = dist[i] + 1
                queue[tail] = j
                tail += 1
    for i in range(n):
        if out[i] != -2:
            continue
        if dist[i] < 0:
            out[i] = 8
            continue
        r = i // cols
        c = i % cols
        for k in range(8):
            rr = r + drow[k]
            cc = c + dcol[k]
            if rr < 0 or cc < 0 or rr >= rows or cc >= cols:
                continue
            j = rr * cols + cc
            if z[j] == z[i] and dist[j] == dist[i] - 1:
                out[i] = k
                break
    return out


@jit
def downstream_index(dirs, rows, cols):
    """Flat index of each cell's receiver, -1 for outlets and nodata."""
    drow = np.array([-1, -1, 0, 1, 1, 1, 0, -1])
    dcol = np.array([0, 1, 1, 1, 0, -1, -1, -1])
    n = rows * cols
    down = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        d = dirs[i]
        if 0 <= d < 8:
            down[i] = (i // cols + drow[d]) * cols + i % cols + dcol[d]
    return down


@jit
def topological_accumulation(down, valid):
    """Kahn ordering from headwaters to outlets plus upstream cell counts.

    Returns ``(order, accumulation, cycle_cell)``; ``cycle_cell`` is -1 when
    the graph is acyclic, otherwise the index of a cell left unordered.
    """
    n = down.shape[0]
    indeg = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if valid[i] and down[i] >= 0:
            indeg[down[i]] += 1
    acc = np.zeros(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    nvalid = 0
    for i in range(n):
        if valid[i]:
            nvalid += 1
            acc[i] = 1
            if indeg[i] == 0:
                order[tail] = i
                tail += 1
    while head < tail:
        i = order[head]
        head += 1
        j = down[i]
        if j >= 0:
            acc[j] += acc[i]
            indeg[j] -= 1
            if indeg[j] == 0:
                order[tail] = j
                tail += 1
    cycle = -1
    if tail < nvalid:
        for i in range(n):
            if valid[i] and indeg[i] > 0:
                cycle = i
                break
    return order[:tail], acc, cycle


def _members_numpy(down, order, outlet):
    """Pointer-jumping membership: each cell's terminal equals the outlet."""
    n = down.shape[0]
    idx = np.arange(n)
    nxt = np.where(down >= 0, down, idx)
    nxt[outlet] = outlet
    while True:
        jumped = nxt[nxt]
        if np.array_equal(jumped, nxt):
            break
        nxt = jumped
    member = nxt == outlet
    ordered = np.zeros(n, dtype=bool)
    ordered[order] = True
    return member & ordered


@jit(fallback=_members_numpy)
def catchment_members(down, order, outlet):
    """Cells whose downstream path reaches ``outlet``."""
    n = down.shape[0]
    member = np.zeros(n, dtype=np.bool_)
    member[outlet] = True
    for k in range(order.shape[0] - 1, -1, -1):
        i = order[k]
        j = down[i]
        if j >= 0 and member[j]:
            member[i] = True
    return member
