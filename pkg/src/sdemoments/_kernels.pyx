# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled per-path stepping loops.

The arithmetic is written expression-for-expression identical to the numpy
fallback in ``_kernels_py`` (same association order, no fused operations), so
the two backends produce bitwise-equal trajectories from the same noise.
"""

from libc.math cimport INFINITY, sqrt


def rigidbody_block(double[:, ::1] x0, double[:, :, ::1] dw,
                    double[::1] params, double dt, int substeps,
                    double[:, :, ::1] out):
    """Advance a block of angular-velocity paths under torque noise.

    x0: (P, 3) initial states. dw: (P, S, 3) Brownian increments, already
    scaled to std sqrt(q_jj*dt), with S = (K-1)*substeps. params packs
    [1/J1, 1/J2, 1/J3, c1, c2, c3] where c_i are the gyroscopic
    coefficients. out: (P, K, 3) receives the trajectory decimated to the
    output grid, with out[:, 0] = x0.
    """
    cdef Py_ssize_t n_paths = x0.shape[0]
    cdef Py_ssize_t n_out = out.shape[1]
    cdef Py_ssize_t p, k, s, i
    cdef double ij1 = params[0]
    cdef double ij2 = params[1]
    cdef double ij3 = params[2]
    cdef double c1 = params[3]
    cdef double c2 = params[4]
    cdef double c3 = params[5]
    cdef double w0, w1, w2, t0, t1, t2

    if dw.shape[1] != (n_out - 1) * substeps:
        raise ValueError("noise rows do not match output steps")
    if dw.shape[0] != n_paths or out.shape[0] != n_paths:
        raise ValueError("path counts disagree between x0, dw, out")

    with nogil:
        for p in range(n_paths):
            w0 = x0[p, 0]
            w1 = x0[p, 1]
            w2 = x0[p, 2]
            out[p, 0, 0] = w0
            out[p, 0, 1] = w1
            out[p, 0, 2] = w2
            i = 0
            for k in range(1, n_out):
                for s in range(substeps):
                    t0 = w0 + (c1 * w1 * w2) * dt + dw[p, i, 0] * ij1
                    t1 = w1 + (c2 * w2 * w0) * dt + dw[p, i, 1] * ij2
                    t2 = w2 + (c3 * w0 * w1) * dt + dw[p, i, 2] * ij3
                    w0 = t0
                    w1 = t1
                    w2 = t2
                    i += 1
                out[p, k, 0] = w0
                out[p, k, 1] = w1
                out[p, k, 2] = w2


def twobody_block(double[:, ::1] x0, double[:, :, ::1] dw,
                  double[::1] params, double dt, int substeps,
                  double[:, :, ::1] out, double[::1] min_r2):
    """Advance a block of orbital states (r, v) under velocity noise.

    x0: (P, 6) initial states ordered [r, v]. dw: (P, S, 3) scaled Brownian
    increments entering the velocity only. params packs [mu_grav].
    out: (P, K, 6) decimated trajectory. min_r2: (P,) receives the smallest
    squared radius each path visits at substep resolution, for the
    close-approach guard.
    """
    cdef Py_ssize_t n_paths = x0.shape[0]
    cdef Py_ssize_t n_out = out.shape[1]
    cdef Py_ssize_t p, k, s, i
    cdef double negmu = -params[0]
    cdef double r0, r1, r2, v0, v1, v2
    cdef double t0, t1, t2, u0, u1, u2
    cdef double nr2, rn, coef, mr

    if dw.shape[1] != (n_out - 1) * substeps:
        raise ValueError("noise rows do not match output steps")
    if dw.shape[0] != n_paths or out.shape[0] != n_paths:
        raise ValueError("path counts disagree between x0, dw, out")
    if min_r2.shape[0] != n_paths:
        raise ValueError("min_r2 length does not match path count")

    with nogil:
        for p in range(n_paths):
            r0 = x0[p, 0]
            r1 = x0[p, 1]
            r2 = x0[p, 2]
            v0 = x0[p, 3]
            v1 = x0[p, 4]
            v2 = x0[p, 5]
            out[p, 0, 0] = r0
            out[p, 0, 1] = r1
            out[p, 0, 2] = r2
            out[p, 0, 3] = v0
            out[p, 0, 4] = v1
            out[p, 0, 5] = v2
            mr = INFINITY
            i = 0
            for k in range(1, n_out):
                for s in range(substeps):
                    nr2 = r0 * r0 + r1 * r1 + r2 * r2
                    if nr2 < mr:
                        mr = nr2
                    rn = sqrt(nr2)
                    coef = negmu / (nr2 * rn)
                    t0 = r0 + v0 * dt
                    t1 = r1 + v1 * dt
                    t2 = r2 + v2 * dt
                    u0 = v0 + (coef * r0) * dt + dw[p, i, 0]
                    u1 = v1 + (coef * r1) * dt + dw[p, i, 1]
                    u2 = v2 + (coef * r2) * dt + dw[p, i, 2]
                    r0 = t0
                    r1 = t1
                    r2 = t2
                    v0 = u0
                    v1 = u1
                    v2 = u2
                    i += 1
                out[p, k, 0] = r0
                out[p, k, 1] = r1
                out[p, k, 2] = r2
                out[p, k, 3] = v0
                out[p, k, 4] = v1
                out[p, k, 5] = v2
            nr2 = r0 * r0 + r1 * r1 + r2 * r2
            if nr2 < mr:
                mr = nr2
            min_r2[p] = mr
