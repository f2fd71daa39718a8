"""Plain-Python geometry kernels, the fallback for the compiled core.

Mirrors ``_geomcore.pyx`` function for function.  The arithmetic is written in
the same operation order as the C code (and the extension is compiled without
FP contraction), so both backends produce identical doubles on identical
input; the cross-backend tests rely on that.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def polygon_clip_area(subject, clip) -> float:
    """Area of the intersection of two convex CCW polygons.

    Sutherland-Hodgman: clip the subject polygon against each directed edge of
    the clip polygon, then take the shoelace area of what survives.
    """
    out = [(float(x), float(y)) for x, y in np.asarray(subject, dtype=np.float64)]
    cp = np.asarray(clip, dtype=np.float64)
    nc = cp.shape[0]
    for i in range(nc):
        ax, ay = float(cp[i - 1, 0]), float(cp[i - 1, 1])
        bx, by = float(cp[i, 0]), float(cp[i, 1])
        ex, ey = bx - ax, by - ay
        src = out
        out = []
        if not src:
            break
        n = len(src)
        for j in range(n):
            px, py = src[j - 1]
            qx, qy = src[j]
            # cross product of the edge with each vertex: >= 0 means inside
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if q_in:
                if not p_in:
                    out.append(_edge_intersection(ax, ay, bx, by, px, py, qx, qy))
                out.append((qx, qy))
            elif p_in:
                out.append(_edge_intersection(ax, ay, bx, by, px, py, qx, qy))
    if len(out) < 3:
        return 0.0
    area = 0.0
    for j in range(len(out)):
        x0, y0 = out[j - 1]
        x1, y1 = out[j]
        area += x0 * y1 - x1 * y0
    return abs(area) * 0.5


def _edge_intersection(ax, ay, bx, by, px, py, qx, qy):
    """Intersection of line (a, b) with segment (p, q) via the determinant form."""
    dcx, dcy = ax - bx, ay - by
    dpx, dpy = px - qx, py - qy
    denom = dcx * dpy - dcy * dpx
    if denom == 0.0:
        # parallel within rounding; fall back to the segment start
        return (px, py)
    n1 = ax * by - ay * bx
    n2 = px * qy - py * qx
    return ((n1 * dpx - dcx * n2) / denom, (n1 * dpy - dcy * n2) / denom)


def mc_overlap_counts(points, lo_x, lo_y, span_x, span_y, rect_a, rect_b):
    """Count sample points inside both rects and inside either rect.

    ``points`` holds unit-square samples that are affinely mapped onto the
    probe box; each rect is (cx, cy, half_w, half_h, cos_t, sin_t).
    """
    pts = np.asarray(points, dtype=np.float64)
    px = lo_x + pts[:, 0] * span_x
    py = lo_y + pts[:, 1] * span_y
    in_a = _inside(px, py, rect_a)
    in_b = _inside(px, py, rect_b)
    both = int(np.count_nonzero(in_a & in_b))
    either = int(np.count_nonzero(in_a | in_b))
    return both, either


def _inside(px, py, rect):
    cx, cy, hw, hh, ct, st = (float(v) for v in rect)
    dx = px - cx
    dy = py - cy
    u = dx * ct + dy * st
    v = dy * ct - dx * st
    return (np.abs(u) <= hw) & (np.abs(v) <= hh)
