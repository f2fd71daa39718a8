# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: convex clipping and Monte-Carlo overlap counting.

Twin of ``_geomref.py``; keep the arithmetic in the same operation order so
both backends agree bit for bit (the build turns FP contraction off).
"""

from libc.math cimport fabs

BACKEND = "compiled"

# A quad clipped by a quad has at most 8 vertices; 16 leaves headroom.
DEF MAXV = 16


cdef inline void _edge_intersection(double ax, double ay, double bx, double by,
                                    double px, double py, double qx, double qy,
                                    double *ox, double *oy) noexcept nogil:
    cdef double dcx = ax - bx
    cdef double dcy = ay - by
    cdef double dpx = px - qx
    cdef double dpy = py - qy
    cdef double denom = dcx * dpy - dcy * dpx
    cdef double n1, n2
    if denom == 0.0:
        ox[0] = px
        oy[0] = py
        return
    n1 = ax * by - ay * bx
    n2 = px * qy - py * qx
    ox[0] = (n1 * dpx - dcx * n2) / denom
    oy[0] = (n1 * dpy - dcy * n2) / denom


def polygon_clip_area(double[:, ::1] subject, double[:, ::1] clip):
    """Area of the intersection of two convex CCW polygons."""
    cdef double bufx[MAXV]
    cdef double bufy[MAXV]
    cdef double outx[MAXV]
    cdef double outy[MAXV]
    cdef int n = subject.shape[0]
    cdef int nc = clip.shape[0]
    cdef int i, j, m, jp
    cdef double ax, ay, bx, by, ex, ey, px, py, qx, qy, ix, iy, area
    cdef bint p_in, q_in

    if n > MAXV or nc > MAXV:
        raise ValueError("polygon has too many vertices for the fixed clip buffer")

    for i in range(n):
        bufx[i] = subject[i, 0]
        bufy[i] = subject[i, 1]

    for i in range(nc):
        ax = clip[(i + nc - 1) % nc, 0]
        ay = clip[(i + nc - 1) % nc, 1]
        bx = clip[i, 0]
        by = clip[i, 1]
        ex = bx - ax
        ey = by - ay
        m = 0
        if n == 0:
            break
        for j in range(n):
            jp = j - 1 if j > 0 else n - 1
            px = bufx[jp]
            py = bufy[jp]
            qx = bufx[j]
            qy = bufy[j]
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if q_in:
                if not p_in:
                    _edge_intersection(ax, ay, bx, by, px, py, qx, qy, &ix, &iy)
                    outx[m] = ix
                    outy[m] = iy
                    m += 1
                outx[m] = qx
                outy[m] = qy
                m += 1
            elif p_in:
                _edge_intersection(ax, ay, bx, by, px, py, qx, qy, &ix, &iy)
                outx[m] = ix
                outy[m] = iy
                m += 1
        n = m
        for j in range(n):
            bufx[j] = outx[j]
            bufy[j] = outy[j]

    if n < 3:
        return 0.0
    area = 0.0
    for j in range(n):
        jp = j - 1 if j > 0 else n - 1
        area += bufx[jp] * bufy[j] - bufx[j] * bufy[jp]
    return fabs(area) * 0.5


def mc_overlap_counts(double[:, ::1] points, double lo_x, double lo_y,
                      double span_x, double span_y,
                      double[::1] rect_a, double[::1] rect_b):
    """Count sample points inside both rects and inside either rect."""
    cdef double acx = rect_a[0], acy = rect_a[1], ahw = rect_a[2]
    cdef double ahh = rect_a[3], act = rect_a[4], ast = rect_a[5]
    cdef double bcx = rect_b[0], bcy = rect_b[1], bhw = rect_b[2]
    cdef double bhh = rect_b[3], bct = rect_b[4], bst = rect_b[5]
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t i
    cdef long hits_a = 0, hits_b = 0, both = 0
    cdef double px, py, dx, dy, u, v
    cdef int in_a, in_b

    # branchless counting so the loop auto-vectorizes; either = a + b - both
    with nogil:
        for i in range(n):
            px = lo_x + points[i, 0] * span_x
            py = lo_y + points[i, 1] * span_y

            dx = px - acx
            dy = py - acy
            u = dx * act + dy * ast
            v = dy * act - dx * ast
            in_a = (fabs(u) <= ahw) & (fabs(v) <= ahh)

            dx = px - bcx
            dy = py - bcy
            u = dx * bct + dy * bst
            v = dy * bct - dx * bst
            in_b = (fabs(u) <= bhw) & (fabs(v) <= bhh)

            hits_a += in_a
            hits_b += in_b
            both += in_a & in_b
    return both, hits_a + hits_b - both
