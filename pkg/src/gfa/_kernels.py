"""Compiled inner loops.

Everything here works on raw arrays so it can be called from numba-compiled
batch loops as well as from the Python wrappers in the public modules.
Kind codes: 0 = logarithmic, 1 = inverse power, 2 = nearest-max.
"""

import math

import numpy as np
from numba import njit

from .rng import _angle_nb, _sphere_direction, unit_dir2

LOG = 0
POWER = 1
NEARMAX = 2

ATTACHED = 0
STALLED = 1
ABSORBED = 2
FAIL_MAXSTEPS = 3
FAIL_ESCAPED = 4
FAIL_START = 5

ABSORB_ID = -2

# layout of the float parameter vector handed to the integrator
P_HMAX, P_DIRTOL, P_STALL, P_TOL, P_MAXSTEPS, P_FARFRAC, P_ESCAPE, P_OPENING, P_NEAR, P_STAGES, P_ERRTOL = range(11)
N_PARAMS = 11

H_MIN = 1e-12
PROBE_STEPS = 100
MAX_REFINE = 60


@njit(cache=True, inline="always")
def weight(r2, code, alpha):
    """Scalar factor w with grad E = sum w * (x_j - x)."""
    if code == LOG:
        return 1.0 / r2
    if alpha == 1.0:
        return 1.0 / (r2 * math.sqrt(r2))
    if alpha == 2.0:
        return 2.0 / (r2 * r2)
    return alpha * r2 ** (-0.5 * (alpha + 2.0))


@njit(cache=True)
def energy_exact(pts, x, code, alpha):
    n, d = pts.shape
    e = 0.0
    best = 0.0
    for j in range(n):
        r2 = 0.0
        for k in range(d):
            dx = pts[j, k] - x[k]
            r2 += dx * dx
        if code == LOG:
            e += -0.5 * math.log(r2)
        elif code == POWER:
            e += r2 ** (-0.5 * alpha)
        else:
            v = 1.0 / math.sqrt(r2)
            if v > best:
                best = v
    if code == NEARMAX:
        return best
    return e


@njit(cache=True)
def min_dist2(pts, x):
    n, d = pts.shape
    best = np.inf
    for j in range(n):
        r2 = 0.0
        for k in range(d):
            dx = pts[j, k] - x[k]
            r2 += dx * dx
        if r2 < best:
            best = r2
    return best


# -- Barnes-Hut tree ---------------------------------------------------------

@njit(cache=True)
def _build_tree_cap(pts, leaf_size, cap):
    n, d = pts.shape
    nch = 1 << d
    center = np.zeros((cap, d))
    half = np.zeros(cap)
    com = np.zeros((cap, d))
    mass = np.zeros(cap)
    child = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    perm = np.arange(n).astype(np.int64)
    tmp = np.empty(n, dtype=np.int64)
    code = np.empty(n, dtype=np.int64)
    if n == 0:
        return center, half, com, mass, child, start, end, perm, 0
    lo = pts[0].copy()
    hi = pts[0].copy()
    for j in range(n):
        for k in range(d):
            lo[k] = min(lo[k], pts[j, k])
            hi[k] = max(hi[k], pts[j, k])
    hw = 0.0
    for k in range(d):
        center[0, k] = 0.5 * (lo[k] + hi[k])
        hw = max(hw, 0.5 * (hi[k] - lo[k]))
    half[0] = hw * (1.0 + 1e-12) + 1e-12
    start[0] = 0
    end[0] = n
    nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    counts = np.zeros(nch, dtype=np.int64)
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        s = start[nd]
        e = end[nd]
        mass[nd] = e - s
        for k in range(d):
            acc = 0.0
            for q in range(s, e):
                acc += pts[perm[q], k]
            com[nd, k] = acc / (e - s)
        if e - s <= leaf_size or half[nd] < 1e-9:
            continue
        if nodes + nch > cap:
            return center, half, com, mass, child, start, end, perm, -1
        counts[:] = 0
        for q in range(s, e):
            c = 0
            p = perm[q]
            for k in range(d):
                if pts[p, k] >= center[nd, k]:
                    c |= 1 << k
            code[q] = c
            counts[c] += 1
        c0 = nodes
        child[nd] = c0
        off = s
        for c in range(nch):
            ci = c0 + c
            start[ci] = off
            end[ci] = off
            off += counts[c]
            half[ci] = 0.5 * half[nd]
            for k in range(d):
                sign = 1.0 if (c >> k) & 1 else -1.0
                center[ci, k] = center[nd, k] + sign * half[ci]
        for q in range(s, e):
            ci = c0 + code[q]
            tmp[end[ci]] = perm[q]
            end[ci] += 1
        for q in range(s, e):
            perm[q] = tmp[q]
        nodes += nch
        # push in reverse so child 0 is processed first (keeps perm order = DFS order)
        for c in range(nch - 1, -1, -1):
            ci = c0 + c
            if end[ci] > start[ci]:
                stack[sp] = ci
                sp += 1
    return center, half, com, mass, child, start, end, perm, nodes


def build_tree(pts, leaf_size=8):
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n, d = pts.shape
    cap = max(16, 4 * n * (1 << d) // max(1, leaf_size) + 64)
    while True:
        out = _build_tree_cap(pts, leaf_size, cap)
        nodes = out[-1]
        if nodes >= 0:
            break
        cap *= 2
    center, half, com, mass, child, start, end, perm, nodes = out
    return (center[:nodes].copy(), half[:nodes].copy(), com[:nodes].copy(), mass[:nodes].copy(),
            child[:nodes].copy(), start[:nodes].copy(), end[:nodes].copy(), perm)


def empty_tree(d):
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return (np.zeros((0, d)), z, np.zeros((0, d)), z.copy(), zi, zi.copy(), zi.copy(), zi.copy())


@njit(cache=True)
def _box_dist2(center, half, nd, x):
    d = x.shape[0]
    acc = 0.0
    for k in range(d):
        dx = abs(x[k] - center[nd, k]) - half[nd]
        if dx > 0.0:
            acc += dx * dx
    return acc


@njit(cache=True)
def tree_field(pts, tree, opening, near_r, x, code, alpha, g):
    """Accumulate the tree part of grad E into g; returns a lower bound on
    the squared nearest distance (exact whenever the nearest point lies
    within ``near_r``)."""
    center, half, com, mass, child, start, end, perm = tree
    d = x.shape[0]
    nch = 1 << d
    dmin2 = np.inf
    if center.shape[0] == 0:
        return dmin2
    stack = np.empty(64 * nch, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    near2 = near_r * near_r
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        if mass[nd] == 0.0:
            continue
        bd2 = _box_dist2(center, half, nd, x)
        if bd2 >= near2:
            r2 = 0.0
            for k in range(d):
                dx = com[nd, k] - x[k]
                r2 += dx * dx
            s = 2.0 * half[nd]
            if r2 > 0.0 and s * s <= opening * opening * r2:
                w = mass[nd] * weight(r2, code, alpha)
                for k in range(d):
                    g[k] += w * (com[nd, k] - x[k])
                if bd2 < dmin2:
                    dmin2 = bd2
                continue
        if child[nd] < 0:
            for q in range(start[nd], end[nd]):
                p = perm[q]
                r2 = 0.0
                for k in range(d):
                    dx = pts[p, k] - x[k]
                    r2 += dx * dx
                if r2 < dmin2:
                    dmin2 = r2
                w = weight(r2, code, alpha)
                for k in range(d):
                    g[k] += w * (pts[p, k] - x[k])
        else:
            c0 = child[nd]
            if sp + nch > stack.shape[0]:
                stack = np.concatenate((stack, np.empty(stack.shape[0], dtype=np.int64)))
            for c in range(nch - 1, -1, -1):
                stack[sp] = c0 + c
                sp += 1
    return dmin2


@njit(cache=True, inline="always")
def field_exact(pts, lo, n, x, code, alpha, g):
    """Sequential exact sum of grad E over points [lo, n) into g; returns
    the squared nearest distance among them."""
    dmin2 = np.inf
    if x.shape[0] == 2:
        x0 = x[0]
        x1 = x[1]
        gx = 0.0
        gy = 0.0
        for j in range(lo, n):
            dx = pts[j, 0] - x0
            dy = pts[j, 1] - x1
            r2 = dx * dx + dy * dy
            if r2 < dmin2:
                dmin2 = r2
            w = weight(r2, code, alpha)
            gx += w * dx
            gy += w * dy
        g[0] = gx
        g[1] = gy
    else:
        x0 = x[0]
        x1 = x[1]
        x2 = x[2]
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for j in range(lo, n):
            dx = pts[j, 0] - x0
            dy = pts[j, 1] - x1
            dz = pts[j, 2] - x2
            r2 = dx * dx + dy * dy + dz * dz
            if r2 < dmin2:
                dmin2 = r2
            w = weight(r2, code, alpha)
            gx += w * dx
            gy += w * dy
            gz += w * dz
        g[0] = gx
        g[1] = gy
        g[2] = gz
    return dmin2


@njit(cache=True)
def field(pts, n, n_tree, tree, opening, near_r, x, code, alpha, g):
    """grad E at x into g; returns squared nearest-particle distance.

    Points ``[0, n_tree)`` are summed through ``tree`` (Barnes-Hut), points
    ``[n_tree, n)`` exactly and sequentially."""
    if n_tree <= 0:
        return field_exact(pts, 0, n, x, code, alpha, g)
    d = x.shape[0]
    for k in range(d):
        g[k] = 0.0
    dmin2 = tree_field(pts, tree, opening, near_r, x, code, alpha, g)
    tail = np.empty(d)
    dt = field_exact(pts, n_tree, n, x, code, alpha, tail)
    for k in range(d):
        g[k] += tail[k]
    return min(dmin2, dt)


@njit(cache=True, inline="always")
def _ray_sphere(x, v, p, radius):
    """First t >= 0 with |x + t v - p| = radius (|v| = 1), or inf."""
    d = x.shape[0]
    b = 0.0
    c = 0.0
    for k in range(d):
        dp = p[k] - x[k]
        b += dp * v[k]
        c += dp * dp
    c -= radius * radius
    if c <= 0.0:
        return 0.0
    if b <= 0.0:
        return np.inf
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    return c / (b + math.sqrt(disc))


@njit(cache=True)
def _tree_candidates(tree, x, radius, out):
    """Point ids of the tree lying in cells within ``radius`` of x."""
    center, half, com, mass, child, start, end, perm = tree
    d = x.shape[0]
    nch = 1 << d
    cnt = 0
    if center.shape[0] == 0:
        return out, cnt
    stack = np.empty(64 * nch, dtype=np.int64)
    stack[0] = 0
    sp = 1
    r2 = radius * radius
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        if mass[nd] == 0.0 or _box_dist2(center, half, nd, x) > r2:
            continue
        if child[nd] < 0:
            for q in range(start[nd], end[nd]):
                if cnt >= out.shape[0]:
                    out = np.concatenate((out, np.empty(out.shape[0] + 16, dtype=np.int64)))
                out[cnt] = perm[q]
                cnt += 1
        else:
            if sp + nch > stack.shape[0]:
                stack = np.concatenate((stack, np.empty(stack.shape[0], dtype=np.int64)))
            for c in range(nch - 1, -1, -1):
                stack[sp] = child[nd] + c
                sp += 1
    return out, cnt


@njit(cache=True)
def _chord_tree(pts, tree, x, v, h):
    best_t = np.inf
    best_j = -1
    buf = np.empty(64, dtype=np.int64)
    buf, cnt = _tree_candidates(tree, x, 1.0 + h + 1e-9, buf)
    for q in range(cnt):
        j = buf[q]
        t = _ray_sphere(x, v, pts[j], 1.0)
        if t <= h and (t < best_t or (t == best_t and j < best_j)):
            best_t = t
            best_j = j
    return best_t, best_j


@njit(cache=True, inline="always")
def _chord_exact(pts, lo, n, x, v, h, ab_c, ab_r, best_t, best_j):
    for j in range(lo, n):
        t = _ray_sphere(x, v, pts[j], 1.0)
        if t <= h and (t < best_t or (t == best_t and j < best_j)):
            best_t = t
            best_j = j
    if ab_r > 0.0:
        t = _ray_sphere(x, v, ab_c, ab_r)
        if t <= h and t < best_t:
            best_t = t
            best_j = ABSORB_ID
    return best_t, best_j


@njit(cache=True)
def chord_hit(pts, n, n_tree, tree, x, v, h, ab_c, ab_r):
    """Earliest crossing of the chord x + t v, t in [0, h], with a unit shell
    or with the absorbing ball; returns (t, id) with id -1 for none and
    ABSORB_ID for the ball."""
    best_t = np.inf
    best_j = -1
    if n_tree > 0:
        best_t, best_j = _chord_tree(pts, tree, x, v, h)
    return _chord_exact(pts, n_tree, n, x, v, h, ab_c, ab_r, best_t, best_j)


@njit(cache=True)
def contact_id(pts, n, n_tree, tree, x, radius):
    """Smallest id with |x - p| <= radius, or -1."""
    best = -1
    d = x.shape[0]
    if n_tree > 0:
        buf = np.empty(64, dtype=np.int64)
        buf, cnt = _tree_candidates(tree, x, radius, buf)
        for q in range(cnt):
            j = buf[q]
            r2 = 0.0
            for k in range(d):
                dx = pts[j, k] - x[k]
                r2 += dx * dx
            if math.sqrt(r2) <= radius and (best < 0 or j < best):
                best = j
    for j in range(n_tree, n):
        if best >= 0 and j > best:
            break
        r2 = 0.0
        for k in range(d):
            dx = pts[j, k] - x[k]
            r2 += dx * dx
        if math.sqrt(r2) <= radius:
            best = j
            break
    return best


@njit(cache=True, inline="always")
def _norm(v):
    acc = 0.0
    for k in range(v.shape[0]):
        acc += v[k] * v[k]
    return math.sqrt(acc)


@njit(cache=True, inline="always")
def _dot(a, b):
    acc = 0.0
    for k in range(a.shape[0]):
        acc += a[k] * b[k]
    return acc


@njit(cache=True, inline="always")
def _gap(dmin2, x, ab_c, ab_r):
    gap = math.sqrt(dmin2) - 1.0
    if ab_r > 0.0:
        r2 = 0.0
        for k in range(x.shape[0]):
            dx = x[k] - ab_c[k]
            r2 += dx * dx
        ga = math.sqrt(r2) - ab_r
        if ga < gap:
            gap = ga
    return gap


@njit(cache=True, inline="always")
def _normalize(v):
    """Scale v to unit length in place; returns the original norm."""
    gn = _norm(v)
    if gn > 0.0:
        for k in range(v.shape[0]):
            v[k] /= gn
    return gn


@njit(cache=True, inline="always")
def _step_error(h, ge, k4, d):
    e = 0.0
    for k in range(d):
        e += (ge[k] - k4[k]) ** 2
    return h * math.sqrt(e) / 6.0


@njit(cache=True)
def integrate(pts, n, n_tree, tree, code, alpha, x0, prm, ab_c, ab_r, traj, xout):
    """Unit-speed gradient ascent from x0 until first contact.

    Each step is a two-stage (midpoint) or four-stage (classical Runge-Kutta)
    update of the normalized field; a step is halved while any stage
    direction turns by more than dir_tol from the start direction. The
    four-stage scheme also halves while h/6 |f(x_new) - k4| exceeds err_tol
    (the gap to the third-order companion that reuses f(x_new) as last stage).

    Returns (status, parent, steps, path_length, n_recorded); the final
    position is written to xout and accepted points (with |grad E|) to traj
    while it has room.
    """
    h_max = prm[P_HMAX]
    cos_tol = math.cos(prm[P_DIRTOL])
    stall_tol = prm[P_STALL]
    tol = prm[P_TOL]
    max_steps = np.int64(prm[P_MAXSTEPS])
    far_frac = prm[P_FARFRAC]
    esc2 = prm[P_ESCAPE] * prm[P_ESCAPE]
    opening = prm[P_OPENING]
    near_r = prm[P_NEAR]
    rk4 = prm[P_STAGES] >= 4.0
    err_tol = prm[P_ERRTOL]
    d = x0.shape[0]
    a_eff = 0.0 if code == LOG else alpha

    x = x0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    ge = np.empty(d)
    xs = np.empty(d)
    inc = np.empty(d)
    u = np.empty(d)
    xn = np.empty(d)
    px = np.empty(d)

    if n_tree > 0:
        dmin2 = field(pts, n, n_tree, tree, opening, near_r, x, code, alpha, k1)
    else:
        dmin2 = field_exact(pts, 0, n, x, code, alpha, k1)
    gn = _normalize(k1)
    gap = _gap(dmin2, x, ab_c, ab_r)
    nrec = 0
    if traj.shape[0] > 0:
        for k in range(d):
            traj[0, k] = x[k]
        traj[0, d] = gn
        nrec = 1
    steps = 0
    path = 0.0
    status = FAIL_MAXSTEPS
    parent = -1
    probe_left = -1
    if gap < -tol:
        xout[:] = x
        return FAIL_START, -1, 0, 0.0, nrec
    if gap <= tol:
        status = ATTACHED
    while status == FAIL_MAXSTEPS:
        if steps >= max_steps:
            break
        r2 = 0.0
        for k in range(d):
            r2 += x[k] * x[k]
        if r2 > esc2:
            status = FAIL_ESCAPED
            break
        dist = math.sqrt(dmin2)
        thr = stall_tol * n / (1.0 + dist) ** (a_eff + 1.0)
        if not (gn > 0.0) or not math.isfinite(gn):
            status = STALLED
            break
        if probe_left < 0 and gn < thr:
            probe_left = PROBE_STEPS
            px[:] = x
        if gap <= 2.0 * h_max:
            h = h_max
        else:
            h = min(max(h_max, far_frac * gap), 0.5 * gap)
        refine = 0
        terminal = False
        hit_j = -1
        collapsed = False
        while True:
            small = h <= H_MIN
            for k in range(d):
                xs[k] = x[k] + 0.5 * h * k1[k]
            if n_tree > 0:
                _dm = field(pts, n, n_tree, tree, opening, near_r, xs, code, alpha, k2)
            else:
                _dm = field_exact(pts, 0, n, xs, code, alpha, k2)
            _gn = _normalize(k2)
            if _dot(k1, k2) < cos_tol and not small:
                h *= 0.5
                continue
            if rk4:
                for k in range(d):
                    xs[k] = x[k] + 0.5 * h * k2[k]
                if n_tree > 0:
                    _dm = field(pts, n, n_tree, tree, opening, near_r, xs, code, alpha, k3)
                else:
                    _dm = field_exact(pts, 0, n, xs, code, alpha, k3)
                _gn = _normalize(k3)
                for k in range(d):
                    xs[k] = x[k] + h * k3[k]
                if n_tree > 0:
                    _dm = field(pts, n, n_tree, tree, opening, near_r, xs, code, alpha, k4)
                else:
                    _dm = field_exact(pts, 0, n, xs, code, alpha, k4)
                _gn = _normalize(k4)
                if (_dot(k1, k3) < cos_tol or _dot(k1, k4) < cos_tol) and not small:
                    h *= 0.5
                    continue
                for k in range(d):
                    inc[k] = h * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]) / 6.0
            else:
                for k in range(d):
                    inc[k] = h * k2[k]
            ln = _norm(inc)
            if not (ln > 0.0):
                collapsed = True
                for k in range(d):
                    inc[k] = h * k1[k]
                ln = h
            for k in range(d):
                u[k] = inc[k] / ln
            if h > 0.5 * gap:
                t, j = chord_hit(pts, n, n_tree, tree, x, u, ln, ab_c, ab_r)
                if j != -1:
                    if t >= ln - tol or refine >= MAX_REFINE or small:
                        for k in range(d):
                            xn[k] = x[k] + t * u[k]
                        terminal = True
                        hit_j = j
                        ln = t
                        if n_tree > 0:
                            dmin2 = field(pts, n, n_tree, tree, opening, near_r, xn, code, alpha, ge)
                        else:
                            dmin2 = field_exact(pts, 0, n, xn, code, alpha, ge)
                        gn = _normalize(ge)
                        if rk4 and not small and _step_error(h, ge, k4, d) > err_tol:
                            terminal = False
                            hit_j = -1
                            h *= 0.5
                            continue
                        break
                    refine += 1
                    h *= t / ln
                    continue
            for k in range(d):
                xn[k] = x[k] + inc[k]
            if n_tree > 0:
                dm2 = field(pts, n, n_tree, tree, opening, near_r, xn, code, alpha, ge)
            else:
                dm2 = field_exact(pts, 0, n, xn, code, alpha, ge)
            gen = _normalize(ge)
            if rk4 and not small and gen > 0.0 and _step_error(h, ge, k4, d) > err_tol:
                h *= 0.5
                continue
            if small or gen == 0.0 or _dot(k1, ge) >= cos_tol:
                collapsed = collapsed or small
                dmin2 = dm2
                gn = gen
                break
            h *= 0.5
        steps += 1
        path += ln
        x[:] = xn
        k1[:] = ge
        if nrec < traj.shape[0]:
            for k in range(d):
                traj[nrec, k] = x[k]
            traj[nrec, d] = gn
            nrec += 1
        if terminal:
            if hit_j == ABSORB_ID:
                status = ABSORBED
            else:
                status = ATTACHED
            break
        gap = _gap(dmin2, x, ab_c, ab_r)
        if gap <= tol:
            status = ATTACHED
            if ab_r > 0.0:
                r2 = 0.0
                for k in range(d):
                    r2 += (x[k] - ab_c[k]) ** 2
                if math.sqrt(r2) - ab_r <= tol:
                    status = ABSORBED
            break
        # a step forced down to H_MIN means the direction field flips
        # within H_MIN: probe for a critical point
        if probe_left < 0 and collapsed:
            probe_left = PROBE_STEPS
            px[:] = x
        if probe_left > 0:
            probe_left -= 1
            if probe_left == 0:
                disp = 0.0
                for k in range(d):
                    disp += (x[k] - px[k]) ** 2
                if math.sqrt(disp) <= tol:
                    status = STALLED
                    break
                probe_left = -1
    xout[:] = x
    if status == ATTACHED:
        parent = contact_id(pts, n, n_tree, tree, x, 1.0 + tol)
    return status, parent, steps, path, nrec


@njit(cache=True)
def launch_batch(pts, n, n_tree, tree, code, alpha, starts, prm, ab_c, ab_r,
                 out_status, out_parent, out_steps, out_pos):
    d = pts.shape[1]
    traj = np.empty((0, d + 1))
    xout = np.empty(d)
    for i in range(starts.shape[0]):
        st, par, steps, path, nrec = integrate(pts, n, n_tree, tree, code, alpha, starts[i],
                                               prm, ab_c, ab_r, traj, xout)
        out_status[i] = st
        out_parent[i] = par
        out_steps[i] = steps
        out_pos[i] = xout


# -- fixed-step reference ----------------------------------------------------

@njit(cache=True)
def _exact_grad(pts, x, code, alpha, g):
    n, d = pts.shape
    for k in range(d):
        g[k] = 0.0
    dmin2 = np.inf
    for j in range(n):
        r2 = 0.0
        for k in range(d):
            dx = pts[j, k] - x[k]
            r2 += dx * dx
        if r2 < dmin2:
            dmin2 = r2
        w = weight(r2, code, alpha)
        for k in range(d):
            g[k] += w * (pts[j, k] - x[k])
    return dmin2


@njit(cache=True)
def _ref_grad2(px, py, x, y, code, alpha):
    gx = 0.0
    gy = 0.0
    dmin2 = np.inf
    for j in range(px.shape[0]):
        dx = px[j] - x
        dy = py[j] - y
        r2 = dx * dx + dy * dy
        if r2 < dmin2:
            dmin2 = r2
        w = weight(r2, code, alpha)
        gx += w * dx
        gy += w * dy
    return gx, gy, dmin2


@njit(cache=True)
def _reference_2d(pts, code, alpha, x0, h, tol, max_steps, esc_r, xout):
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    x = x0[0]
    y = x0[1]
    gx, gy, dmin2 = _ref_grad2(px, py, x, y, code, alpha)
    if dmin2 < 1.0:
        xout[0] = x
        xout[1] = y
        return FAIL_START, -1, 0
    esc2 = esc_r * esc_r
    steps = 0
    while steps < max_steps:
        gn = math.sqrt(gx * gx + gy * gy)
        if not (gn > 0.0):
            xout[0] = x
            xout[1] = y
            return STALLED, -1, steps
        s = 0.5 * h / gn
        mx, my, _ = _ref_grad2(px, py, x + s * gx, y + s * gy, code, alpha)
        s = h / math.sqrt(mx * mx + my * my)
        xn = x + s * mx
        yn = y + s * my
        gx, gy, dmin2 = _ref_grad2(px, py, xn, yn, code, alpha)
        steps += 1
        if dmin2 <= 1.0:
            lo = 0.0
            hi = 1.0
            q = np.empty(2)
            while (hi - lo) * h > 0.25 * tol:
                mid = 0.5 * (lo + hi)
                q[0] = x + mid * (xn - x)
                q[1] = y + mid * (yn - y)
                if min_dist2(pts, q) <= 1.0:
                    hi = mid
                else:
                    lo = mid
            xout[0] = x + hi * (xn - x)
            xout[1] = y + hi * (yn - y)
            return ATTACHED, contact_id(pts, pts.shape[0], 0, empty_tree_nb(2), xout, 1.0 + tol), steps
        if xn * xn + yn * yn > esc2:
            xout[0] = xn
            xout[1] = yn
            return FAIL_ESCAPED, -1, steps
        x = xn
        y = yn
    xout[0] = x
    xout[1] = y
    return FAIL_MAXSTEPS, -1, steps


@njit(cache=True)
def integrate_reference(pts, code, alpha, x0, h, tol, max_steps, esc_r, xout):
    """Fixed-step midpoint integration of the normalized ascent field with
    step h; the last chord is bisected to locate first contact."""
    n, d = pts.shape
    if d == 2:
        return _reference_2d(pts, code, alpha, x0, h, tol, max_steps, esc_r, xout)
    x = x0.copy()
    g = np.empty(d)
    gm = np.empty(d)
    xm = np.empty(d)
    xn = np.empty(d)
    q = np.empty(d)
    dmin2 = _exact_grad(pts, x, code, alpha, g)
    if math.sqrt(dmin2) < 1.0:
        xout[:] = x
        return FAIL_START, -1, 0
    steps = 0
    while steps < max_steps:
        gn = _norm(g)
        if not (gn > 0.0):
            xout[:] = x
            return STALLED, -1, steps
        for k in range(d):
            xm[k] = x[k] + 0.5 * h * g[k] / gn
        _exact_grad(pts, xm, code, alpha, gm)
        gmn = _norm(gm)
        for k in range(d):
            xn[k] = x[k] + h * gm[k] / gmn
        dmin2 = _exact_grad(pts, xn, code, alpha, g)
        steps += 1
        if math.sqrt(dmin2) <= 1.0:
            lo = 0.0
            hi = 1.0
            while (hi - lo) * h > 0.25 * tol:
                mid = 0.5 * (lo + hi)
                for k in range(d):
                    q[k] = x[k] + mid * (xn[k] - x[k])
                if math.sqrt(min_dist2(pts, q)) <= 1.0:
                    hi = mid
                else:
                    lo = mid
            for k in range(d):
                xout[k] = x[k] + hi * (xn[k] - x[k])
            return ATTACHED, contact_id(pts, n, 0, empty_tree_nb(d), xout, 1.0 + tol), steps
        r2 = 0.0
        for k in range(d):
            r2 += xn[k] * xn[k]
        if r2 > esc_r * esc_r:
            xout[:] = xn
            return FAIL_ESCAPED, -1, steps
        x[:] = xn
    xout[:] = x
    return FAIL_MAXSTEPS, -1, steps


@njit(cache=True)
def _lane_grad2(px, py, x, y, code, alpha, gx, gy, dm):
    m = x.shape[0]
    for i in range(m):
        gx[i] = 0.0
        gy[i] = 0.0
        dm[i] = np.inf
    # one loop per weight law so the lane loop has no branches
    e = -0.5 * (alpha + 2.0)
    for j in range(px.shape[0]):
        pxj = px[j]
        pyj = py[j]
        if code == LOG:
            for i in range(m):
                dx = pxj - x[i]
                dy = pyj - y[i]
                r2 = dx * dx + dy * dy
                dm[i] = min(dm[i], r2)
                w = 1.0 / r2
                gx[i] += w * dx
                gy[i] += w * dy
        elif alpha == 2.0:
            for i in range(m):
                dx = pxj - x[i]
                dy = pyj - y[i]
                r2 = dx * dx + dy * dy
                dm[i] = min(dm[i], r2)
                w = 2.0 / (r2 * r2)
                gx[i] += w * dx
                gy[i] += w * dy
        elif alpha == 1.0:
            for i in range(m):
                dx = pxj - x[i]
                dy = pyj - y[i]
                r2 = dx * dx + dy * dy
                dm[i] = min(dm[i], r2)
                w = 1.0 / (r2 * math.sqrt(r2))
                gx[i] += w * dx
                gy[i] += w * dy
        else:
            for i in range(m):
                dx = pxj - x[i]
                dy = pyj - y[i]
                r2 = dx * dx + dy * dy
                dm[i] = min(dm[i], r2)
                w = alpha * r2 ** e
                gx[i] += w * dx
                gy[i] += w * dy


@njit(cache=True)
def reference_lanes_2d(pts, code, alpha, starts, h, tol, max_steps, esc_r,
                       out_status, out_parent, out_pos):
    """Many fixed-step reference flows advanced in lockstep.

    Per flow this performs exactly the steps of the scalar reference; the
    lanes only interleave independent work so the loops vectorize.
    """
    m = starts.shape[0]
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    x = starts[:, 0].copy()
    y = starts[:, 1].copy()
    gx = np.empty(m)
    gy = np.empty(m)
    mx = np.empty(m)
    my = np.empty(m)
    xm = np.empty(m)
    ym = np.empty(m)
    xn = np.empty(m)
    yn = np.empty(m)
    dm = np.empty(m)
    live = np.ones(m, dtype=np.bool_)
    esc2 = esc_r * esc_r
    q = np.empty(2)
    _lane_grad2(px, py, x, y, code, alpha, gx, gy, dm)
    n_live = 0
    for i in range(m):
        out_status[i] = FAIL_MAXSTEPS
        out_parent[i] = -1
        if dm[i] < 1.0:
            live[i] = False
            out_status[i] = FAIL_START
            out_pos[i, 0] = x[i]
            out_pos[i, 1] = y[i]
        else:
            n_live += 1
    steps = 0
    while n_live > 0 and steps < max_steps:
        for i in range(m):
            s = 0.5 * h / math.sqrt(gx[i] * gx[i] + gy[i] * gy[i])
            xm[i] = x[i] + s * gx[i]
            ym[i] = y[i] + s * gy[i]
        _lane_grad2(px, py, xm, ym, code, alpha, mx, my, dm)
        for i in range(m):
            s = h / math.sqrt(mx[i] * mx[i] + my[i] * my[i])
            xn[i] = x[i] + s * mx[i]
            yn[i] = y[i] + s * my[i]
        _lane_grad2(px, py, xn, yn, code, alpha, gx, gy, dm)
        steps += 1
        for i in range(m):
            if not live[i]:
                continue
            if not (gx[i] * gx[i] + gy[i] * gy[i] > 0.0):
                live[i] = False
                n_live -= 1
                out_status[i] = STALLED
                out_pos[i, 0] = xn[i]
                out_pos[i, 1] = yn[i]
            elif dm[i] <= 1.0:
                lo = 0.0
                hi = 1.0
                while (hi - lo) * h > 0.25 * tol:
                    mid = 0.5 * (lo + hi)
                    q[0] = x[i] + mid * (xn[i] - x[i])
                    q[1] = y[i] + mid * (yn[i] - y[i])
                    if min_dist2(pts, q) <= 1.0:
                        hi = mid
                    else:
                        lo = mid
                q[0] = x[i] + hi * (xn[i] - x[i])
                q[1] = y[i] + hi * (yn[i] - y[i])
                out_pos[i, 0] = q[0]
                out_pos[i, 1] = q[1]
                out_status[i] = ATTACHED
                out_parent[i] = contact_id(pts, pts.shape[0], 0, empty_tree_nb(2), q, 1.0 + tol)
                live[i] = False
                n_live -= 1
            elif xn[i] * xn[i] + yn[i] * yn[i] > esc2:
                live[i] = False
                n_live -= 1
                out_status[i] = FAIL_ESCAPED
                out_pos[i, 0] = xn[i]
                out_pos[i, 1] = yn[i]
        for i in range(m):
            if live[i]:
                x[i] = xn[i]
                y[i] = yn[i]
            else:
                # park finished lanes far away so their arithmetic stays finite
                x[i] = 1e6
                y[i] = 1e6
                gx[i] = 1.0
                gy[i] = 0.0
    for i in range(m):
        if live[i]:
            out_pos[i, 0] = x[i]
            out_pos[i, 1] = y[i]
    return steps


@njit(cache=True)
def empty_tree_nb(d):
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    return (np.zeros((0, d)), z, np.zeros((0, d)), z.copy(), zi, zi.copy(), zi.copy(), zi.copy())


@njit(cache=True)
def reference_batch(pts, code, alpha, starts, h, tol, max_steps, esc_r, out_status, out_parent, out_pos):
    d = pts.shape[1]
    xout = np.empty(d)
    for i in range(starts.shape[0]):
        st, par, steps = integrate_reference(pts, code, alpha, starts[i], h, tol, max_steps, esc_r, xout)
        out_status[i] = st
        out_parent[i] = par
        out_pos[i] = xout


# -- convex hull (2D, strictly convex, counter-clockwise) ----------------------

@njit(cache=True)
def _cross(pos, a, b, c):
    return ((pos[b, 0] - pos[a, 0]) * (pos[c, 1] - pos[a, 1])
            - (pos[b, 1] - pos[a, 1]) * (pos[c, 0] - pos[a, 0]))


@njit(cache=True)
def hull_insert(pos, hull, m, k):
    """Insert point k into the hull stored in hull[:m]; returns the new m.

    hull must have room for m + 1 entries."""
    if m == 0:
        hull[0] = k
        return 1
    if m == 1:
        a = hull[0]
        if pos[a, 0] == pos[k, 0] and pos[a, 1] == pos[k, 1]:
            return 1
        hull[1] = k
        return 2
    if m == 2:
        a = hull[0]
        b = hull[1]
        cr = _cross(pos, a, b, k)
        if cr > 0.0:
            hull[2] = k
            return 3
        if cr < 0.0:
            hull[1] = k
            hull[2] = b
            return 3
        ex = pos[b, 0] - pos[a, 0]
        ey = pos[b, 1] - pos[a, 1]
        t = (pos[k, 0] - pos[a, 0]) * ex + (pos[k, 1] - pos[a, 1]) * ey
        if t < 0.0:
            hull[0] = k
        elif t > ex * ex + ey * ey:
            hull[1] = k
        return 2
    outside = False
    vis = np.empty(m, dtype=np.bool_)
    for i in range(m):
        cr = _cross(pos, hull[i], hull[(i + 1) % m], k)
        vis[i] = cr <= 0.0
        if cr < 0.0:
            outside = True
    if not outside:
        return m
    # visible edges form one circular run; find its first edge
    i0 = -1
    for i in range(m):
        if vis[i] and not vis[(i - 1) % m]:
            i0 = i
            break
    i1 = i0
    while vis[(i1 + 1) % m]:
        i1 += 1
    n_vis = i1 - i0 + 1
    keep = m - n_vis + 1
    tmp = np.empty(keep + 1, dtype=np.int64)
    for q in range(keep):
        tmp[q] = hull[(i1 + 1 + q) % m]
    tmp[keep] = k
    for q in range(keep + 1):
        hull[q] = tmp[q]
    return keep + 1


@njit(cache=True)
def hull_argmax(pos, hull, m, c, s):
    best = -np.inf
    bid = -1
    for i in range(m):
        v = hull[i]
        dt = pos[v, 0] * c + pos[v, 1] * s
        if dt > best or (dt == best and v < bid):
            best = dt
            bid = v
    return bid


@njit(cache=True)
def grow_nearmax_2d(pos, parent, n0, n_target, seed, hull, m, diam, thetas, hull_sizes):
    """alpha = infinity growth in the plane; fills rows n0..n_target-1."""
    for k in range(n0, n_target):
        th = _angle_nb(seed, np.uint64(k), np.uint64(0))
        c, s = unit_dir2(th)
        bid = hull_argmax(pos, hull, m, c, s)
        pos[k, 0] = pos[bid, 0] + c
        pos[k, 1] = pos[bid, 1] + s
        parent[k] = bid
        thetas[k] = th
        m = hull_insert(pos, hull, m, k)
        dk = diam[k - 1]
        for i in range(m):
            v = hull[i]
            dx = pos[k, 0] - pos[v, 0]
            dy = pos[k, 1] - pos[v, 1]
            r = math.sqrt(dx * dx + dy * dy)
            if r > dk:
                dk = r
        diam[k] = dk
        hull_sizes[k] = m
    return m


@njit(cache=True)
def far_argmax(pos, n, u):
    best = -np.inf
    bid = -1
    d = u.shape[0]
    for i in range(n):
        dt = 0.0
        for k in range(d):
            dt += pos[i, k] * u[k]
        if dt > best:
            best = dt
            bid = i
    return bid


@njit(cache=True)
def max_dist_from(pos, n, k):
    d = pos.shape[1]
    best = 0.0
    for i in range(n):
        r2 = 0.0
        for q in range(d):
            dx = pos[i, q] - pos[k, q]
            r2 += dx * dx
        if r2 > best:
            best = r2
    return math.sqrt(best)


@njit(cache=True)
def grow_nearmax_3d(pos, parent, n0, n_target, seed, dirs, diam):
    """alpha = infinity growth in space via the argmax-over-points rule."""
    for k in range(n0, n_target):
        u = _sphere_direction(seed, np.uint64(k), np.uint64(0))
        bid = far_argmax(pos, k, u)
        for q in range(3):
            pos[k, q] = pos[bid, q] + u[q]
            dirs[k, q] = u[q]
        parent[k] = bid
        dk = max_dist_from(pos, k, k)
        diam[k] = max(diam[k - 1], dk)


@njit(cache=True)
def nearmax_batch(pos, ids, dirs, out):
    """Far-field parent for each direction: hull argmax in 2D (ids = hull
    vertices), argmax over all points in 3D."""
    m = ids.shape[0]
    for i in range(dirs.shape[0]):
        if pos.shape[1] == 2:
            out[i] = hull_argmax(pos, ids, m, dirs[i, 0], dirs[i, 1])
        else:
            out[i] = far_argmax(pos, pos.shape[0], dirs[i])
