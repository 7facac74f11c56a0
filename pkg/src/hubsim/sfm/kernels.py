"""Compiled inner loop of the social-force engine.

Everything here works on flat numpy arrays so it can be jitted. Forces for a
step read positions from before the step only (synchronous update), so
results do not depend on agent iteration order beyond float summation.

Packed parameter layout (see ``SfmParams.packed``)::

    0 v0  1 tau  2 A_p  3 B_p  4 A_w  5 B_w  6 r  7 v_max  8 dt
    9 arrival_radius  10 agent_cutoff  11 wall_cutoff

Grid layout: ``(x0, y0, cell, nx, ny)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PENDING = 0
ACTIVE = 1
EXITED = 2

PUSH_EPS = 1e-6
SPAWN_TRIES = 9


@njit(cache=True)
def closest_on_segment(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return ax, ay
    t = ((px - ax) * dx + (py - ay) * dy) / den
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return ax + t * dx, ay + t * dy


@njit(cache=True)
def point_in_ring(px, py, xy, start, end):
    inside = False
    j = end - 1
    for i in range(start, end):
        xi = xy[i, 0]
        yi = xy[i, 1]
        xj = xy[j, 0]
        yj = xy[j, 1]
        if (yi > py) != (yj > py):
            xint = xi + (py - yi) * (xj - xi) / (yj - yi)
            if px < xint:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def nearest_on_ring(px, py, xy, start, end):
    best = np.inf
    bx = px
    by = py
    j = end - 1
    for i in range(start, end):
        qx, qy = closest_on_segment(px, py, xy[j, 0], xy[j, 1], xy[i, 0], xy[i, 1])
        d = (qx - px) ** 2 + (qy - py) ** 2
        if d < best:
            best = d
            bx = qx
            by = qy
        j = i
    return bx, by, math.sqrt(best)


@njit(cache=True)
def free_position(x, y, obs_ptr, obs_xy, walk_ptr, walk_xy):
    """Outside every obstacle and inside some walkable ring."""
    for k in range(obs_ptr.shape[0] - 1):
        if point_in_ring(x, y, obs_xy, obs_ptr[k], obs_ptr[k + 1]):
            return False
    for k in range(walk_ptr.shape[0] - 1):
        if point_in_ring(x, y, walk_xy, walk_ptr[k], walk_ptr[k + 1]):
            return True
    return False


@njit(cache=True)
def agent_force(i, pos, vel, tx, ty, cand, ncand, walls, p):
    """Acceleration on agent ``i`` from driving, agent and wall terms.

    ``cand[:ncand]`` are candidate neighbour indices; the cutoff is applied here.
    """
    v0 = p[0]
    tau = p[1]
    ap = p[2]
    bp = p[3]
    aw = p[4]
    bw = p[5]
    r = p[6]
    cut = p[10]
    wcut = p[11]
    xi = pos[i, 0]
    yi = pos[i, 1]

    ex = tx - xi
    ey = ty - yi
    dn = math.sqrt(ex * ex + ey * ey)
    if dn > 0.0:
        ex /= dn
        ey /= dn
    else:
        ex = 0.0
        ey = 0.0
    fx = (v0 * ex - vel[i, 0]) / tau
    fy = (v0 * ey - vel[i, 1]) / tau

    for k in range(ncand):
        j = cand[k]
        if j == i:
            continue
        dx = xi - pos[j, 0]
        dy = yi - pos[j, 1]
        d = math.sqrt(dx * dx + dy * dy)
        if d > cut:
            continue
        if d > 0.0:
            nx = dx / d
            ny = dy / d
        else:
            # coincident agents: deterministic axis from index order
            nx = 1.0 if i < j else -1.0
            ny = 0.0
        mag = ap * math.exp((2.0 * r - d) / bp)
        fx += mag * nx
        fy += mag * ny

    for w in range(walls.shape[0]):
        qx, qy = closest_on_segment(xi, yi, walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3])
        dx = xi - qx
        dy = yi - qy
        d = math.sqrt(dx * dx + dy * dy)
        if d > wcut:
            continue
        if d > 0.0:
            nx = dx / d
            ny = dy / d
        else:
            sx = walls[w, 2] - walls[w, 0]
            sy = walls[w, 3] - walls[w, 1]
            sl = math.sqrt(sx * sx + sy * sy)
            nx = -sy / sl
            ny = sx / sl
        mag = aw * math.exp((r - d) / bw)
        fx += mag * nx
        fy += mag * ny
    return fx, fy


@njit(cache=True)
def build_hash(pos, active, n_active, grid):
    x0 = grid[0]
    y0 = grid[1]
    cell = grid[2]
    nx = int(grid[3])
    ny = int(grid[4])
    ncell = nx * ny
    start = np.zeros(ncell + 1, dtype=np.int64)
    cells = np.empty(n_active, dtype=np.int64)
    for k in range(n_active):
        i = active[k]
        cx = int(math.floor((pos[i, 0] - x0) / cell))
        cy = int(math.floor((pos[i, 1] - y0) / cell))
        cx = min(max(cx, 0), nx - 1)
        cy = min(max(cy, 0), ny - 1)
        c = cy * nx + cx
        cells[k] = c
        start[c + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    items = np.empty(n_active, dtype=np.int64)
    fill = start[:-1].copy()
    for k in range(n_active):
        c = cells[k]
        items[fill[c]] = active[k]
        fill[c] += 1
    return start, items


@njit(cache=True)
def compute_forces(pos, vel, targets, active, n_active, walls, p, grid, use_hash):
    """Accelerations for ``active[:n_active]``; rows of inactive agents stay zero."""
    n = pos.shape[0]
    acc = np.zeros((n, 2))
    cand = np.empty(max(n_active, 1), dtype=np.int64)
    if use_hash:
        start, items = build_hash(pos, active, n_active, grid)
        x0 = grid[0]
        y0 = grid[1]
        cell = grid[2]
        nx = int(grid[3])
        ny = int(grid[4])
        for k in range(n_active):
            i = active[k]
            cx = min(max(int(math.floor((pos[i, 0] - x0) / cell)), 0), nx - 1)
            cy = min(max(int(math.floor((pos[i, 1] - y0) / cell)), 0), ny - 1)
            nc = 0
            for gy in range(max(cy - 1, 0), min(cy + 2, ny)):
                for gx in range(max(cx - 1, 0), min(cx + 2, nx)):
                    c = gy * nx + gx
                    for m in range(start[c], start[c + 1]):
                        cand[nc] = items[m]
                        nc += 1
            fx, fy = agent_force(i, pos, vel, targets[i, 0], targets[i, 1], cand, nc, walls, p)
            acc[i, 0] = fx
            acc[i, 1] = fy
    else:
        for k in range(n_active):
            cand[k] = active[k]
        for k in range(n_active):
            i = active[k]
            fx, fy = agent_force(i, pos, vel, targets[i, 0], targets[i, 1], cand, n_active, walls, p)
            acc[i, 0] = fx
            acc[i, 1] = fy
    return acc


@njit(cache=True)
def resolve_position(xo, yo, xn, yn, obs_ptr, obs_xy, walk_ptr, walk_xy, max_step):
    """Project a tentative position out of obstacles / back into the walkable area.

    Falls back to the old position if the projection would break the
    per-step displacement bound or land somewhere still blocked.
    """
    moved = False
    cx = xn
    cy = yn
    for k in range(obs_ptr.shape[0] - 1):
        if point_in_ring(cx, cy, obs_xy, obs_ptr[k], obs_ptr[k + 1]):
            qx, qy, d = nearest_on_ring(cx, cy, obs_xy, obs_ptr[k], obs_ptr[k + 1])
            if d == 0.0:
                return xo, yo
            cx = qx + (qx - cx) / d * PUSH_EPS
            cy = qy + (qy - cy) / d * PUSH_EPS
            moved = True
            break
    if not moved:
        inside = False
        for k in range(walk_ptr.shape[0] - 1):
            if point_in_ring(cx, cy, walk_xy, walk_ptr[k], walk_ptr[k + 1]):
                inside = True
                break
        if inside:
            return xn, yn
        best = np.inf
        bx = cx
        by = cy
        for k in range(walk_ptr.shape[0] - 1):
            qx, qy, d = nearest_on_ring(cx, cy, walk_xy, walk_ptr[k], walk_ptr[k + 1])
            if d < best:
                best = d
                bx = qx
                by = qy
        if best == 0.0:
            return xo, yo
        cx = bx + (bx - cx) / best * PUSH_EPS
        cy = by + (by - cy) / best * PUSH_EPS
    if not free_position(cx, cy, obs_ptr, obs_xy, walk_ptr, walk_xy):
        return xo, yo
    if math.sqrt((cx - xo) ** 2 + (cy - yo) ** 2) > max_step:
        return xo, yo
    return cx, cy


@njit(cache=True)
def _try_spawn(i, pos, status, orig_seg, orig_in, spawn_u, p, eps):
    """Find a free disc on the origin segment; fills pos[i] and returns True on success."""
    r = p[6]
    ax = orig_seg[i, 0]
    ay = orig_seg[i, 1]
    bx = orig_seg[i, 2]
    by = orig_seg[i, 3]
    length = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
    ux = (bx - ax) / length
    uy = (by - ay) / length
    margin = min(r, 0.5 * length)
    span = length - 2.0 * margin
    s_pref = margin + spawn_u[i] * span
    n = pos.shape[0]
    for attempt in range(SPAWN_TRIES + 1):
        if attempt == 0:
            s = s_pref
        else:
            # alternate outward from the preferred spot
            k = (attempt + 1) // 2
            sign = 1.0 if attempt % 2 == 1 else -1.0
            s = s_pref + sign * k * span / SPAWN_TRIES
            if s < margin or s > margin + span:
                continue
        x = ax + s * ux + eps * orig_in[i, 0]
        y = ay + s * uy + eps * orig_in[i, 1]
        ok = True
        for j in range(n):
            if status[j] == ACTIVE:
                if (pos[j, 0] - x) ** 2 + (pos[j, 1] - y) ** 2 < (2.0 * r) ** 2:
                    ok = False
                    break
        if ok:
            pos[i, 0] = x
            pos[i, 1] = y
            return True
    return False


@njit(cache=True)
def step_world(step, pos, vel, status, wp, route_ptr, route_xy, dest_seg, orig_seg, orig_in,
               spawn_u, spawn_step, order, cursor, walls, obs_ptr, obs_xy, walk_ptr, walk_xy,
               p, grid, use_hash, eps, spawned_at, exited_at, rec, n_rec, record):
    """Advance the world from ``step`` to ``step + 1``.

    Returns the new record count. ``cursor[0]`` tracks the first possibly
    pending entry of ``order``.
    """
    dt = p[8]
    vmax = p[7]
    arrive = p[9]
    n = pos.shape[0]
    t = step * dt

    # spawning
    while cursor[0] < n and status[order[cursor[0]]] != PENDING:
        cursor[0] += 1
    for k in range(cursor[0], n):
        i = order[k]
        if spawn_step[i] > step:
            break
        if status[i] != PENDING:
            continue
        if _try_spawn(i, pos, status, orig_seg, orig_in, spawn_u, p, eps):
            status[i] = ACTIVE
            vel[i, 0] = 0.0
            vel[i, 1] = 0.0
            spawned_at[i] = step
            if record:
                rec[n_rec, 0] = i
                rec[n_rec, 1] = t
                rec[n_rec, 2] = pos[i, 0]
                rec[n_rec, 3] = pos[i, 1]
                rec[n_rec, 4] = 0.0
                rec[n_rec, 5] = 0.0
                n_rec += 1

    active = np.empty(n, dtype=np.int64)
    n_active = 0
    for i in range(n):
        if status[i] == ACTIVE:
            active[n_active] = i
            n_active += 1
    if n_active == 0:
        return n_rec

    targets = np.zeros((n, 2))
    for k in range(n_active):
        i = active[k]
        targets[i, 0] = route_xy[wp[i], 0]
        targets[i, 1] = route_xy[wp[i], 1]
    acc = compute_forces(pos, vel, targets, active, n_active, walls, p, grid, use_hash)

    max_step = vmax * dt
    t1 = (step + 1) * dt
    for k in range(n_active):
        i = active[k]
        vx = vel[i, 0] + acc[i, 0] * dt
        vy = vel[i, 1] + acc[i, 1] * dt
        sp = math.sqrt(vx * vx + vy * vy)
        if sp > vmax:
            vx *= vmax / sp
            vy *= vmax / sp
        xo = pos[i, 0]
        yo = pos[i, 1]
        xn, yn = resolve_position(xo, yo, xo + vx * dt, yo + vy * dt,
                                  obs_ptr, obs_xy, walk_ptr, walk_xy, max_step)
        vel[i, 0] = (xn - xo) / dt
        vel[i, 1] = (yn - yo) / dt
        pos[i, 0] = xn
        pos[i, 1] = yn

        last = route_ptr[i + 1] - 1
        if wp[i] < last:
            if (xn - route_xy[wp[i], 0]) ** 2 + (yn - route_xy[wp[i], 1]) ** 2 <= arrive * arrive:
                wp[i] += 1
        else:
            qx, qy = closest_on_segment(xn, yn, dest_seg[i, 0], dest_seg[i, 1],
                                        dest_seg[i, 2], dest_seg[i, 3])
            if (xn - qx) ** 2 + (yn - qy) ** 2 <= arrive * arrive:
                status[i] = EXITED
                exited_at[i] = step + 1
        if record:
            rec[n_rec, 0] = i
            rec[n_rec, 1] = t1
            rec[n_rec, 2] = xn
            rec[n_rec, 3] = yn
            rec[n_rec, 4] = vel[i, 0]
            rec[n_rec, 5] = vel[i, 1]
            n_rec += 1
    return n_rec


@njit(cache=True)
def run_world(start, n_steps, pos, vel, status, wp, route_ptr, route_xy, dest_seg, orig_seg,
              orig_in, spawn_u, spawn_step, order, cursor, walls, obs_ptr, obs_xy, walk_ptr,
              walk_xy, p, grid, use_hash, eps, spawned_at, exited_at, rec, n_rec, record):
    """Run until ``n_steps`` or until the record buffer might overflow.

    Returns ``(next_step, n_rec)``; the caller grows ``rec`` and resumes when
    ``next_step < n_steps``.
    """
    n = pos.shape[0]
    step = start
    while step < n_steps:
        if record and n_rec + 2 * n > rec.shape[0]:
            return step, n_rec
        any_active = False
        for i in range(n):
            if status[i] == ACTIVE:
                any_active = True
                break
        if not any_active:
            # idle hall: jump to the next scheduled spawn
            nxt = n_steps
            for k in range(cursor[0], n):
                i = order[k]
                if status[i] == PENDING:
                    nxt = max(spawn_step[i], step)
                    break
            if nxt >= n_steps:
                return n_steps, n_rec
            step = nxt
        n_rec = step_world(step, pos, vel, status, wp, route_ptr, route_xy, dest_seg, orig_seg,
                           orig_in, spawn_u, spawn_step, order, cursor, walls, obs_ptr, obs_xy,
                           walk_ptr, walk_xy, p, grid, use_hash, eps, spawned_at, exited_at,
                           rec, n_rec, record)
        step += 1
    return step, n_rec
