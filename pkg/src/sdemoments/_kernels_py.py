"""Numpy fallback for the stepping loops.

Every arithmetic expression here matches the compiled kernels term for term
and in association order. Both sides perform plain IEEE multiply/add/sqrt
(the extension is built with contraction disabled), so trajectories agree
bitwise between backends.
"""

import numpy as np


def rigidbody_block(x0, dw, params, dt, substeps, out):
    """Vectorized counterpart of the compiled rigid-body kernel."""
    n_paths, n_out = out.shape[0], out.shape[1]
    if dw.shape[1] != (n_out - 1) * substeps:
        raise ValueError("noise rows do not match output steps")
    if dw.shape[0] != n_paths or x0.shape[0] != n_paths:
        raise ValueError("path counts disagree between x0, dw, out")
    ij1, ij2, ij3, c1, c2, c3 = (float(v) for v in params)
    dt = float(dt)

    w0 = x0[:, 0].copy()
    w1 = x0[:, 1].copy()
    w2 = x0[:, 2].copy()
    out[:, 0, 0] = w0
    out[:, 0, 1] = w1
    out[:, 0, 2] = w2
    i = 0
    for k in range(1, n_out):
        for _ in range(substeps):
            t0 = w0 + (c1 * w1 * w2) * dt + dw[:, i, 0] * ij1
            t1 = w1 + (c2 * w2 * w0) * dt + dw[:, i, 1] * ij2
            t2 = w2 + (c3 * w0 * w1) * dt + dw[:, i, 2] * ij3
            w0, w1, w2 = t0, t1, t2
            i += 1
        out[:, k, 0] = w0
        out[:, k, 1] = w1
        out[:, k, 2] = w2


def twobody_block(x0, dw, params, dt, substeps, out, min_r2):
    """Vectorized counterpart of the compiled two-body kernel."""
    n_paths, n_out = out.shape[0], out.shape[1]
    if dw.shape[1] != (n_out - 1) * substeps:
        raise ValueError("noise rows do not match output steps")
    if dw.shape[0] != n_paths or x0.shape[0] != n_paths:
        raise ValueError("path counts disagree between x0, dw, out")
    if min_r2.shape[0] != n_paths:
        raise ValueError("min_r2 length does not match path count")
    negmu = -float(params[0])
    dt = float(dt)

    r0 = x0[:, 0].copy()
    r1 = x0[:, 1].copy()
    r2 = x0[:, 2].copy()
    v0 = x0[:, 3].copy()
    v1 = x0[:, 4].copy()
    v2 = x0[:, 5].copy()
    out[:, 0, 0] = r0
    out[:, 0, 1] = r1
    out[:, 0, 2] = r2
    out[:, 0, 3] = v0
    out[:, 0, 4] = v1
    out[:, 0, 5] = v2
    mr = np.full(n_paths, np.inf)
    i = 0
    for k in range(1, n_out):
        for _ in range(substeps):
            nr2 = r0 * r0 + r1 * r1 + r2 * r2
            np.minimum(mr, nr2, out=mr)
            rn = np.sqrt(nr2)
            coef = negmu / (nr2 * rn)
            t0 = r0 + v0 * dt
            t1 = r1 + v1 * dt
            t2 = r2 + v2 * dt
            u0 = v0 + (coef * r0) * dt + dw[:, i, 0]
            u1 = v1 + (coef * r1) * dt + dw[:, i, 1]
            u2 = v2 + (coef * r2) * dt + dw[:, i, 2]
            r0, r1, r2 = t0, t1, t2
            v0, v1, v2 = u0, u1, u2
            i += 1
        out[:, k, 0] = r0
        out[:, k, 1] = r1
        out[:, k, 2] = r2
        out[:, k, 3] = v0
        out[:, k, 4] = v1
        out[:, k, 5] = v2
    nr2 = r0 * r0 + r1 * r1 + r2 * r2
    np.minimum(mr, nr2, out=mr)
    min_r2[:] = mr
