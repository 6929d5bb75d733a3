"""Compiled hot loops for the LIDAR, camera and ground shading.

These mirror the scalar routines in :mod:`igvsim.geometry` operation for
operation; the test suite checks them against independent marching oracles.
Inputs are the flat arrays produced by :meth:`igvsim.scene.Scene.arrays`.
"""

import math

import numpy as np
from numba import njit

MASK32 = 0xFFFFFFFF
TANGENT_EPS = 1e-12
PARALLEL_EPS = 1e-15

PAINT_RGB = (235.0, 235.0, 225.0)
PAINT_JITTER = 8.0
SKY_RGB = (170, 200, 235)
BARREL_RGB = (214, 80, 20)
BAND_RGB = (245, 245, 245)
BOX_RGB = (200, 200, 200)
BANDS = ((0.3, 0.45), (0.6, 0.75))


@njit(cache=True)
def hash01(ix, iy, seed, salt):
    h = (ix * 0x8DA6B343) ^ (iy * 0xD8163841) ^ (seed * 0xCB1AB31F) ^ (salt * 0x165667B1)
    h &= MASK32
    h ^= h >> 16
    h = (h * 0x7FEB352D) & MASK32
    h ^= h >> 15
    h = (h * 0x846CA68B) & MASK32
    h ^= h >> 16
    return h / 4294967296.0


@njit(cache=True)
def value_noise(x, y, seed, salt):
    fx = math.floor(x)
    fy = math.floor(y)
    ix = np.int64(fx)
    iy = np.int64(fy)
    tx = x - fx
    ty = y - fy
    n00 = hash01(ix, iy, seed, salt)
    n10 = hash01(ix + 1, iy, seed, salt)
    n01 = hash01(ix, iy + 1, seed, salt)
    n11 = hash01(ix + 1, iy + 1, seed, salt)
    a = n00 + (n10 - n00) * tx
    b = n01 + (n11 - n01) * tx
    return a + (b - a) * ty


@njit(cache=True)
def _to_u8(v):
    r = math.floor(v + 0.5)
    if r < 0.0:
        return 0
    if r > 255.0:
        return 255
    return np.int64(r)


@njit(cache=True)
def _seg_dist(px, py, x0, y0, x1, y1):
    ex = x1 - x0
    ey = y1 - y0
    wx = px - x0
    wy = py - y0
    ll = ex * ex + ey * ey
    u = 0.0
    if ll > 0.0:
        u = (wx * ex + wy * ey) / ll
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
    dx = wx - u * ex
    dy = wy - u * ey
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def shade_ground(xs, ys, terrain, segs, grid_meta, cell_start, cell_items, out):
    """Shade ground points (xs[k], ys[k]) into out[k, 0:3].

    terrain = [r, g, b, noise_amplitude, noise_scale, noise_seed]. A point
    inside a line band takes the paint of the first matching segment;
    segments are stored in path order, so the lowest-index path wins.
    The per-point work stays in this one loop: helper calls that take
    array arguments cost more than the shading itself.
    """
    amp = terrain[3]
    scale = terrain[4]
    seed = np.int64(terrain[5])
    nseg = segs.shape[0]
    gx0, gy0, cell, gnx, gny = grid_meta[0], grid_meta[1], grid_meta[2], grid_meta[3], grid_meta[4]
    for k in range(xs.shape[0]):
        px = xs[k]
        py = ys[k]
        s = -1
        if nseg > 0:
            cx = math.floor((px - gx0) / cell)
            cy = math.floor((py - gy0) / cell)
            if cx >= 0.0 and cy >= 0.0 and cx < gnx and cy < gny:
                c = np.int64(cy) * np.int64(gnx) + np.int64(cx)
                for kk in range(cell_start[c], cell_start[c + 1]):
                    q = cell_items[kk]
                    if _seg_dist(px, py, segs[q, 0], segs[q, 1], segs[q, 2], segs[q, 3]) <= segs[q, 4]:
                        s = q
                        break
        nx = px / scale
        ny = py / scale
        if s >= 0:
            inten = segs[s, 5]
            for ch in range(3):
                v = PAINT_RGB[ch] * inten
                if amp > 0.0:
                    v += PAINT_JITTER * (2.0 * value_noise(nx, ny, seed, ch + 1) - 1.0)
                out[k, ch] = _to_u8(v)
        else:
            factor = 1.0
            if amp > 0.0:
                factor = 1.0 + amp * (2.0 * value_noise(nx, ny, seed, 0) - 1.0)
            for ch in range(3):
                out[k, ch] = _to_u8(terrain[ch] * factor)


@njit(cache=True)
def ray_circle(ox, oy, dx, dy, cx, cy, r):
    px = ox - cx
    py = oy - cy
    b = px * dx + py * dy
    c = px * px + py * py - r * r
    disc = b * b - c
    if disc <= TANGENT_EPS:
        return math.inf
    sq = math.sqrt(disc)
    t0 = -b - sq
    if t0 >= 0.0:
        return t0
    t1 = -b + sq
    if t1 >= 0.0:
        return t1
    return math.inf


@njit(cache=True)
def _slab(o, d, h, tmin, tmax):
    if abs(d) < PARALLEL_EPS:
        if o < -h or o > h:
            return 1.0, 0.0
        return tmin, tmax
    t1 = (-h - o) / d
    t2 = (h - o) / d
    if t1 > t2:
        t1, t2 = t2, t1
    return max(tmin, t1), min(tmax, t2)


@njit(cache=True)
def ray_box(ox, oy, oz, dx, dy, dz, bx, by, hx, hy, height, c, s, use_z):
    """Oriented box at (bx, by), half extents (hx, hy), yaw given as (cos, sin)."""
    px = ox - bx
    py = oy - by
    lx = c * px + s * py
    ly = -s * px + c * py
    ldx = c * dx + s * dy
    ldy = -s * dx + c * dy
    tn, tf = _slab(lx, ldx, hx, -math.inf, math.inf)
    if tn > tf:
        return math.inf
    tn, tf = _slab(ly, ldy, hy, tn, tf)
    if tn > tf:
        return math.inf
    if use_z:
        h2 = height / 2.0
        tn, tf = _slab(oz - h2, dz, h2, tn, tf)
        if tn > tf:
            return math.inf
    if tf < 0.0:
        return math.inf
    if tn >= 0.0:
        return tn
    return tf


@njit(cache=True)
def ray_cylinder(ox, oy, oz, dx, dy, dz, cx, cy, r, h):
    px = ox - cx
    py = oy - cy
    best = math.inf
    a = dx * dx + dy * dy
    if a > PARALLEL_EPS:
        b = (px * dx + py * dy) / a
        c = (px * px + py * py - r * r) / a
        disc = b * b - c
        if disc > TANGENT_EPS:
            sq = math.sqrt(disc)
            t = -b - sq
            z = oz + t * dz
            if t >= 0.0 and z >= 0.0 and z <= h:
                best = t
            else:
                t = -b + sq
                z = oz + t * dz
                if t >= 0.0 and z >= 0.0 and z <= h:
                    best = t
    if abs(dz) > PARALLEL_EPS:
        t = (h - oz) / dz
        if t >= 0.0 and t < best:
            x = px + t * dx
            y = py + t * dy
            if x * x + y * y <= r * r:
                best = t
    return best


@njit(cache=True)
def lidar_scan(out, ox, oy, heading, fov, min_r, max_r, mount_h, barrels, boxes):
    n = out.shape[0]
    step = fov / (n - 1)
    # only obstacles taller than the scan plane and within reach can return
    near_b = np.empty(barrels.shape[0], dtype=np.int64)
    nb = 0
    for j in range(barrels.shape[0]):
        dx = barrels[j, 0] - ox
        dy = barrels[j, 1] - oy
        reach = max_r + barrels[j, 2]
        if barrels[j, 3] > mount_h and dx * dx + dy * dy <= reach * reach:
            near_b[nb] = j
            nb += 1
    near_x = np.empty(boxes.shape[0], dtype=np.int64)
    nx = 0
    for j in range(boxes.shape[0]):
        dx = boxes[j, 0] - ox
        dy = boxes[j, 1] - oy
        reach = max_r + math.sqrt(boxes[j, 2] * boxes[j, 2] + boxes[j, 3] * boxes[j, 3])
        if boxes[j, 5] > mount_h and dx * dx + dy * dy <= reach * reach:
            near_x[nx] = j
            nx += 1
    for i in range(n):
        ang = heading - fov / 2.0 + i * step
        dx = math.cos(ang)
        dy = math.sin(ang)
        best = math.inf
        for q in range(nb):
            j = near_b[q]
            t = ray_circle(ox, oy, dx, dy, barrels[j, 0], barrels[j, 1], barrels[j, 2])
            if t < best:
                best = t
        for q in range(nx):
            j = near_x[q]
            t = ray_box(ox, oy, 0.0, dx, dy, 0.0, boxes[j, 0], boxes[j, 1], boxes[j, 2],
                        boxes[j, 3], boxes[j, 5], boxes[j, 6], boxes[j, 7], False)
            if t < best:
                best = t
        if best > max_r:
            best = max_r
        elif best < min_r:
            best = min_r
        out[i] = best


@njit(cache=True)
def pixel_dirs(cam, focal, dirs):
    """Fill dirs (h, w, 3) with the unit world direction through every pixel centre, row 0 on top."""
    h = dirs.shape[0]
    w = dirs.shape[1]
    for j in range(h):
        vj = j + 0.5 - h / 2.0
        for i in range(w):
            ui = i + 0.5 - w / 2.0
            d0 = cam[3] * focal - cam[6] * ui - cam[9] * vj
            d1 = cam[4] * focal - cam[7] * ui - cam[10] * vj
            d2 = cam[5] * focal - cam[8] * ui - cam[11] * vj
            n = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            dirs[j, i, 0] = d0 / n
            dirs[j, i, 1] = d1 / n
            dirs[j, i, 2] = d2 / n


@njit(cache=True)
def _screen_rect(cam, focal, w, h, xmin, xmax, ymin, ymax, zmax):
    """Conservative pixel rectangle covering an axis-aligned 3D box.

    Returns (i0, i1, j0, j1); i0 > i1 means nothing visible.
    """
    umin = math.inf
    umax = -math.inf
    vmin = math.inf
    vmax = -math.inf
    n_front = 0
    for a in range(8):
        x = xmin if a & 1 == 0 else xmax
        y = ymin if a & 2 == 0 else ymax
        z = 0.0 if a & 4 == 0 else zmax
        vx = x - cam[0]
        vy = y - cam[1]
        vz = z - cam[2]
        depth = vx * cam[3] + vy * cam[4] + vz * cam[5]
        if depth <= 1e-6:
            continue
        n_front += 1
        sx = -(vx * cam[6] + vy * cam[7] + vz * cam[8])
        sy = -(vx * cam[9] + vy * cam[10] + vz * cam[11])
        u = w / 2.0 + focal * sx / depth
        v = h / 2.0 + focal * sy / depth
        umin = min(umin, u)
        umax = max(umax, u)
        vmin = min(vmin, v)
        vmax = max(vmax, v)
    if n_front == 0:
        return 1, 0, 1, 0
    if n_front < 8:
        return 0, w - 1, 0, h - 1
    i0 = max(0, np.int64(math.floor(umin - 0.5)) - 1)
    i1 = min(w - 1, np.int64(math.ceil(umax - 0.5)) + 1)
    j0 = max(0, np.int64(math.floor(vmin - 0.5)) - 1)
    j1 = min(h - 1, np.int64(math.ceil(vmax - 0.5)) + 1)
    return i0, i1, j0, j1


@njit(cache=True)
def render(out, cam, focal, barrels, boxes, terrain, segs, grid_meta, cell_start, cell_items,
           dirs, tbuf, gx, gy, gidx, shaded):
    """Ray-cast one frame into out (h, w, 3) uint8.

    cam = [C(3), forward(3), left(3), up(3)] in world coordinates.
    Obstacles are drawn first into a depth buffer, each only over the pixel
    rectangle its bounding box projects to; the ground is shaded last.
    dirs (h, w, 3), tbuf (h, w), gx, gy, gidx (h*w) and shaded (h*w, 3) are
    caller-owned scratch space: reusing them avoids large per-frame
    allocations, which otherwise cost more than the rendering.
    """
    h = out.shape[0]
    w = out.shape[1]
    cx, cy, cz = cam[0], cam[1], cam[2]
    pixel_dirs(cam, focal, dirs)
    tbuf[:, :] = math.inf

    for b in range(barrels.shape[0]):
        bx, by, r, bh = barrels[b, 0], barrels[b, 1], barrels[b, 2], barrels[b, 3]
        i0, i1, j0, j1 = _screen_rect(cam, focal, w, h, bx - r, bx + r, by - r, by + r, bh)
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                d0, d1, d2 = dirs[j, i, 0], dirs[j, i, 1], dirs[j, i, 2]
                t = ray_cylinder(cx, cy, cz, d0, d1, d2, bx, by, r, bh)
                if t < tbuf[j, i]:
                    tbuf[j, i] = t
                    rel = (cz + t * d2) / bh
                    banded = (rel >= BANDS[0][0] and rel <= BANDS[0][1]) or (
                        rel >= BANDS[1][0] and rel <= BANDS[1][1])
                    for ch in range(3):
                        out[j, i, ch] = BAND_RGB[ch] if banded else BARREL_RGB[ch]

    for b in range(boxes.shape[0]):
        bx, by, hx, hy, bh = boxes[b, 0], boxes[b, 1], boxes[b, 2], boxes[b, 3], boxes[b, 5]
        c = boxes[b, 6]
        s = boxes[b, 7]
        ex = abs(c) * hx + abs(s) * hy
        ey = abs(s) * hx + abs(c) * hy
        i0, i1, j0, j1 = _screen_rect(cam, focal, w, h, bx - ex, bx + ex, by - ey, by + ey, bh)
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                t = ray_box(cx, cy, cz, dirs[j, i, 0], dirs[j, i, 1], dirs[j, i, 2],
                            bx, by, hx, hy, bh, c, s, True)
                if t < tbuf[j, i]:
                    tbuf[j, i] = t
                    for ch in range(3):
                        out[j, i, ch] = BOX_RGB[ch]

    ng = 0
    for j in range(h):
        for i in range(w):
            d2 = dirs[j, i, 2]
            tg = math.inf
            if d2 < 0.0 and cz > 0.0:
                tg = -cz / d2
            if tbuf[j, i] < math.inf and tbuf[j, i] <= tg:
                continue
            if tg < math.inf:
                gx[ng] = cx + tg * dirs[j, i, 0]
                gy[ng] = cy + tg * dirs[j, i, 1]
                gidx[ng] = j * w + i
                ng += 1
            else:
                for ch in range(3):
                    out[j, i, ch] = SKY_RGB[ch]
    shade_ground(gx[:ng], gy[:ng], terrain, segs, grid_meta, cell_start, cell_items, shaded)
    for k in range(ng):
        j = gidx[k] // w
        i = gidx[k] - j * w
        for ch in range(3):
            out[j, i, ch] = shaded[k, ch]
