"""Compiled path-simulation kernels.

All kernels integrate per-path with Euler-Maruyama, draw noise from the
stateless counter RNG (bitwise-identical to ``_rng``), and write results only
into their own path's output slice, so results never depend on thread count
or chunking.  Eigenwork inside the hot loops uses closed forms for r <= 2 and
a cyclic Jacobi sweep otherwise; LAPACK stays out of the per-step path.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange, uint64

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_SALT_U1 = U64(0x243F6A8885A308D3)
_SALT_U2 = U64(0x13198A2E03707344)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_SH30 = U64(30)
_SH27 = U64(27)
_SH31 = U64(31)
_SH11 = U64(11)
_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586476925287
_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# counter RNG (scalar twin of _rng.py; pinned bitwise by tests)


@njit(uint64(uint64), inline="always", cache=True)
def _mix64(x):
    x = (x ^ (x >> _SH30)) * _M1
    x = (x ^ (x >> _SH27)) * _M2
    return x ^ (x >> _SH31)


@njit(inline="always", cache=True)
def _normal_pair(key, path, step, slot):
    k = _mix64(key + _GOLDEN * path)
    k = _mix64(k + _GOLDEN * step)
    k = _mix64(k + _GOLDEN * slot)
    u1 = (_mix64(k ^ _SALT_U1) >> _SH11) * _INV_2_53
    u2 = (_mix64(k ^ _SALT_U2) >> _SH11) * _INV_2_53
    if u1 < _INV_2_53:
        u1 = _INV_2_53
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    return rad * np.cos(ang), rad * np.sin(ang)


@njit(inline="always", cache=True)
def _fill_normals(key, path, step, slot0, n, out):
    # variate i of the block sits at component i%2 of pair slot0 + i//2
    m = (n + 1) // 2
    for s in range(m):
        zc, zs = _normal_pair(key, path, step, slot0 + U64(s))
        out[2 * s] = zc
        if 2 * s + 1 < n:
            out[2 * s + 1] = zs


@njit(cache=True, parallel=True)
def normal_block(key, path0, npaths, step, n):
    """(npaths, n) normals; row p uses path counter path0 + p.  Test hook."""
    out = np.empty((npaths, n))
    for p in prange(npaths):
        _fill_normals(key, U64(path0) + U64(p), U64(step), U64(0), n, out[p])
    return out


# ---------------------------------------------------------------------------
# small dense symmetric eigenwork


@njit(inline="always", cache=True)
def _jacobi_eig(q, w, v, r):
    """Cyclic Jacobi on the scratch matrix q (destroyed); eigenvalues into w,
    eigenvectors into the columns of v.  Off-diagonal tolerance ~1e-13 of
    scale, max 30 sweeps."""
    for i in range(r):
        for j in range(r):
            v[i, j] = 1.0 if i == j else 0.0
    scale = 0.0
    for i in range(r):
        for j in range(r):
            a = abs(q[i, j])
            if a > scale:
                scale = a
    if scale == 0.0:
        for i in range(r):
            w[i] = 0.0
        return
    thresh = 1e-13 * scale
    for _ in range(30):
        off = 0.0
        for p in range(r - 1):
            for s in range(p + 1, r):
                off += abs(q[p, s])
        if off <= thresh:
            break
        for p in range(r - 1):
            for s in range(p + 1, r):
                apq = q[p, s]
                if abs(apq) <= 1e-18 * scale:
                    continue
                theta = 0.5 * (q[s, s] - q[p, p]) / apq
                t = 1.0 / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                for k in range(r):
                    qkp = q[k, p]
                    qks = q[k, s]
                    q[k, p] = c * qkp - sn * qks
                    q[k, s] = sn * qkp + c * qks
                for k in range(r):
                    qpk = q[p, k]
                    qsk = q[s, k]
                    q[p, k] = c * qpk - sn * qsk
                    q[s, k] = sn * qpk + c * qsk
                for k in range(r):
                    vkp = v[k, p]
                    vks = v[k, s]
                    v[k, p] = c * vkp - sn * vks
                    v[k, s] = sn * vkp + c * vks
    for i in range(r):
        w[i] = q[i, i]


@njit(inline="always", cache=True)
def _min_eig_sym(q, r, scr, w, v):
    if r == 1:
        return q[0, 0]
    if r == 2:
        tr = q[0, 0] + q[1, 1]
        det = q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0]
        disc = tr * tr - 4.0 * det
        if disc < 0.0:
            disc = 0.0
        return 0.5 * (tr - np.sqrt(disc))
    for i in range(r):
        for j in range(r):
            scr[i, j] = q[i, j]
    _jacobi_eig(scr, w, v, r)
    mn = w[0]
    for i in range(1, r):
        if w[i] < mn:
            mn = w[i]
    return mn


@njit(inline="always", cache=True)
def _psd_sqrt(q, out, r, scr, w, v):
    """Unique PSD square root; eigenvalues floored at zero.  Closed form for
    r <= 2, Jacobi otherwise."""
    if r == 1:
        x = q[0, 0]
        out[0, 0] = np.sqrt(x) if x > 0.0 else 0.0
        return
    if r == 2:
        det = q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0]
        s = np.sqrt(det) if det > 0.0 else 0.0
        t2 = q[0, 0] + q[1, 1] + 2.0 * s
        if t2 <= 0.0:
            out[0, 0] = out[0, 1] = out[1, 0] = out[1, 1] = 0.0
            return
        inv = 1.0 / np.sqrt(t2)
        out[0, 0] = (q[0, 0] + s) * inv
        out[1, 1] = (q[1, 1] + s) * inv
        out[0, 1] = q[0, 1] * inv
        out[1, 0] = q[1, 0] * inv
        return
    for i in range(r):
        for j in range(r):
            scr[i, j] = q[i, j]
    _jacobi_eig(scr, w, v, r)
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                wl = w[l]
                if wl > 0.0:
                    acc += v[i, l] * np.sqrt(wl) * v[j, l]
            out[i, j] = acc


@njit(inline="always", cache=True)
def _floor_psd(q, r, scr, w, v):
    """Eigenvalue-floor q at zero in place; returns 1 if flooring occurred."""
    mn = _min_eig_sym(q, r, scr, w, v)
    if mn >= 0.0:
        return 0
    for i in range(r):
        for j in range(r):
            scr[i, j] = q[i, j]
    _jacobi_eig(scr, w, v, r)
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                wl = w[l]
                if wl > 0.0:
                    acc += v[i, l] * wl * v[j, l]
            q[i, j] = acc
    return 1


# ---------------------------------------------------------------------------
# shared drift/diffusion pieces


@njit(inline="always", cache=True)
def _riccati_drift(q, a, rmat, smat, out, sq, r):
    # out = A q + q A' + R - q S q
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += smat[i, l] * q[l, j]
            sq[i, j] = acc  # S q
    for i in range(r):
        for j in range(r):
            acc = rmat[i, j]
            for l in range(r):
                acc += a[i, l] * q[l, j] + q[i, l] * a[j, l] - q[i, l] * sq[l, j]
            out[i, j] = acc


@njit(inline="always", cache=True)
def _sigma_map(q, rmat, smat, kappa, varpi, out, scr, r):
    # out = R + kappa (q + varpi I) S (q + varpi I)
    if kappa == 0:
        for i in range(r):
            for j in range(r):
                out[i, j] = rmat[i, j]
        return
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                ql = q[i, l] + (varpi if i == l else 0.0)
                acc += ql * smat[l, j]
            scr[i, j] = acc  # (q + varpi I) S
    for i in range(r):
        for j in range(r):
            acc = rmat[i, j]
            for l in range(r):
                acc += scr[i, l] * (q[l, j] + (varpi if l == j else 0.0))
            out[i, j] = acc


@njit(inline="always", cache=True)
def _sym_sandwich_noise(sq_left, dw, sq_right, out, scr, r):
    # out = sym(sq_left @ dw @ sq_right)
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += dw[i, l] * sq_right[l, j]
            scr[i, j] = acc
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += sq_left[i, l] * scr[l, j]
            out[i, j] = acc
    for i in range(r):
        for j in range(i, r):
            m = 0.5 * (out[i, j] + out[j, i])
            out[i, j] = m
            out[j, i] = m


# ---------------------------------------------------------------------------
# forward matrix Riccati diffusion


@njit(cache=True, parallel=True)
def riccati_forward_kernel(
    q0,
    a,
    rmat,
    smat,
    kappa,
    varpi,
    eps,
    dt,
    n_steps,
    rec_steps,
    key,
    path0,
    npaths,
    track_e,
    track_x,
    a_ou,
    ebar,
    x0,
    guard,
    out_q,
    out_e,
    out_ld,
    out_x,
    out_div,
    out_floor,
):
    r = q0.shape[0]
    n_rec = rec_steps.shape[0]
    sdt = np.sqrt(dt)
    pairs_q = (r * r + 1) // 2
    for p in prange(npaths):
        path = U64(path0) + U64(p)
        q = q0.copy()
        drift = np.empty((r, r))
        sig = np.empty((r, r))
        sqq = np.empty((r, r))
        sqs = np.empty((r, r))
        dw = np.empty((r, r))
        noise = np.empty((r, r))
        scr = np.empty((r, r))
        scr2 = np.empty((r, r))
        w = np.empty(r)
        v = np.empty((r, r))
        zbuf = np.empty(r * r)
        emat = np.eye(r)
        t1 = np.empty((r, r))
        xvec = x0.copy()
        xnew = np.empty(r)
        sigx = np.empty((r, r))
        sqsx = np.empty((r, r))
        zx = np.empty(r)
        ld = 0.0
        floor_ct = 0
        diverged = False
        irec = 0
        for k in range(n_steps):
            if track_e == 1 or track_x == 1:
                # frozen-coefficient generator F = A - q S at the step start
                for i in range(r):
                    for j in range(r):
                        acc = a[i, j]
                        for l in range(r):
                            acc -= q[i, l] * smat[l, j]
                        scr2[i, j] = acc
            if track_e == 1:
                # product integration: E <- exp3(F dt) E, logdet by trace
                for i in range(r):
                    ld += scr2[i, i] * dt
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += scr2[i, l] * emat[l, j]
                        t1[i, j] = acc * dt
                for i in range(r):
                    for j in range(r):
                        emat[i, j] += t1[i, j]
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += scr2[i, l] * t1[l, j]
                        noise[i, j] = acc * dt * 0.5  # reuse noise as scratch
                for i in range(r):
                    for j in range(r):
                        emat[i, j] += noise[i, j]
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += scr2[i, l] * noise[l, j]
                        t1[i, j] = acc * dt / 3.0
                for i in range(r):
                    for j in range(r):
                        emat[i, j] += t1[i, j]
            if track_x == 1:
                # error process dX = ((A_ou - qS) X) dt + (Sigma_{1,vp} + ebar^2 Sigma_{k,vp})^{1/2} dW
                _sigma_map(q, rmat, smat, 1, varpi, sigx, scr, r)
                if ebar > 0.0:
                    _sigma_map(q, rmat, smat, kappa, varpi, sig, scr, r)
                    for i in range(r):
                        for j in range(r):
                            sigx[i, j] += ebar * ebar * sig[i, j]
                _psd_sqrt(sigx, sqsx, r, scr, w, v)
                _fill_normals(key, path, U64(k), U64(pairs_q), r, zx)
                for i in range(r):
                    acc = 0.0
                    for j in range(r):
                        fij = a_ou[i, j]
                        for l in range(r):
                            fij -= q[i, l] * smat[l, j]
                        acc += fij * xvec[j] + sqsx[i, j] * zx[j] * sdt / dt
                    xnew[i] = xvec[i] + acc * dt
                for i in range(r):
                    xvec[i] = xnew[i]
            # Euler-Maruyama update of q
            _riccati_drift(q, a, rmat, smat, drift, scr, r)
            if eps > 0.0:
                _sigma_map(q, rmat, smat, kappa, varpi, sig, scr, r)
                _psd_sqrt(q, sqq, r, scr, w, v)
                _psd_sqrt(sig, sqs, r, scr, w, v)
                _fill_normals(key, path, U64(k), U64(0), r * r, zbuf)
                for i in range(r):
                    for j in range(r):
                        dw[i, j] = zbuf[i * r + j] * sdt
                _sym_sandwich_noise(sqq, dw, sqs, noise, scr, r)
                for i in range(r):
                    for j in range(r):
                        q[i, j] += drift[i, j] * dt + eps * noise[i, j]
            else:
                for i in range(r):
                    for j in range(r):
                        q[i, j] += drift[i, j] * dt
            for i in range(r):
                for j in range(i + 1, r):
                    m = 0.5 * (q[i, j] + q[j, i])
                    q[i, j] = m
                    q[j, i] = m
            floor_ct += _floor_psd(q, r, scr, w, v)
            trq = 0.0
            for i in range(r):
                trq += q[i, i]
            if trq > guard or not np.isfinite(trq):
                diverged = True
            while irec < n_rec and rec_steps[irec] == k + 1:
                for i in range(r):
                    for j in range(r):
                        out_q[p, irec, i, j] = q[i, j]
                if track_e == 1:
                    for i in range(r):
                        for j in range(r):
                            out_e[p, irec, i, j] = emat[i, j]
                    out_ld[p, irec] = ld
                if track_x == 1:
                    for i in range(r):
                        out_x[p, irec, i] = xvec[i]
                irec += 1
            if diverged:
                # freeze: propagate current state into the remaining records
                for jrec in range(irec, n_rec):
                    for i in range(r):
                        for j in range(r):
                            out_q[p, jrec, i, j] = q[i, j]
                    if track_e == 1:
                        for i in range(r):
                            for j in range(r):
                                out_e[p, jrec, i, j] = emat[i, j]
                        out_ld[p, jrec] = ld
                    if track_x == 1:
                        for i in range(r):
                            out_x[p, jrec, i] = xvec[i]
                break
        out_div[p] = 1 if diverged else 0
        out_floor[p] = floor_ct


# ---------------------------------------------------------------------------
# vectorized (half-vectorization) form


@njit(cache=True, parallel=True)
def riccati_vech_kernel(
    q0,
    basis,
    a,
    rmat,
    smat,
    kappa,
    varpi,
    eps,
    dt,
    n_steps,
    rec_steps,
    key,
    path0,
    npaths,
    guard,
    out_v,
    out_div,
    out_floor,
):
    r = q0.shape[0]
    rbar = r * (r + 1) // 2
    n_rec = rec_steps.shape[0]
    sdt = np.sqrt(dt)
    for p in prange(npaths):
        path = U64(path0) + U64(p)
        q = q0.copy()
        drift = np.empty((r, r))
        sig = np.empty((r, r))
        scr = np.empty((r, r))
        w = np.empty(r)
        v = np.empty((r, r))
        bmat = np.empty((rbar, rbar))
        bscr = np.empty((rbar, rbar))
        sqb = np.empty((rbar, rbar))
        wb = np.empty(rbar)
        vb = np.empty((rbar, rbar))
        xi = np.empty(rbar)
        qv = np.empty(rbar)
        floor_ct = 0
        diverged = False
        irec = 0
        for k in range(n_steps):
            _riccati_drift(q, a, rmat, smat, drift, scr, r)
            _sigma_map(q, rmat, smat, kappa, varpi, sig, scr, r)
            # bmat[al, be] = Tr(E_al q E_be sig)
            for al in range(rbar):
                for be in range(rbar):
                    acc = 0.0
                    for i in range(r):
                        for j in range(r):
                            if basis[al, i, j] != 0.0:
                                for l in range(r):
                                    for m in range(r):
                                        acc += (
                                            basis[al, i, j]
                                            * q[j, l]
                                            * basis[be, l, m]
                                            * sig[m, i]
                                        )
                    bmat[al, be] = acc
            for al in range(rbar):
                for be in range(al + 1, rbar):
                    m = 0.5 * (bmat[al, be] + bmat[be, al])
                    bmat[al, be] = m
                    bmat[be, al] = m
            for al in range(rbar):
                for be in range(rbar):
                    bscr[al, be] = bmat[al, be]
            _jacobi_eig(bscr, wb, vb, rbar)
            for al in range(rbar):
                for be in range(rbar):
                    acc = 0.0
                    for l in range(rbar):
                        wl = wb[l]
                        if wl > 0.0:
                            acc += vb[al, l] * np.sqrt(wl) * vb[be, l]
                    sqb[al, be] = acc
            if eps > 0.0:
                _fill_normals(key, path, U64(k), U64(0), rbar, xi)
            else:
                for al in range(rbar):
                    xi[al] = 0.0
            # q update in vech coordinates
            idx = 0
            for i in range(r):
                for j in range(i, r):
                    scale = 1.0 if i == j else _SQRT2
                    acc = scale * drift[i, j] * dt
                    for al in range(rbar):
                        acc += eps * sqb[idx, al] * xi[al] * sdt
                    qv[idx] = acc
                    idx += 1
            idx = 0
            for i in range(r):
                for j in range(i, r):
                    inc = qv[idx] if i == j else qv[idx] / _SQRT2
                    q[i, j] += inc
                    if i != j:
                        q[j, i] += inc
                    idx += 1
            floor_ct += _floor_psd(q, r, scr, w, v)
            trq = 0.0
            for i in range(r):
                trq += q[i, i]
            if trq > guard or not np.isfinite(trq):
                diverged = True
            while irec < n_rec and rec_steps[irec] == k + 1:
                idx = 0
                for i in range(r):
                    for j in range(i, r):
                        out_v[p, irec, idx] = q[i, j] if i == j else _SQRT2 * q[i, j]
                        idx += 1
                irec += 1
            if diverged:
                for jrec in range(irec, n_rec):
                    idx = 0
                    for i in range(r):
                        for j in range(i, r):
                            out_v[p, jrec, idx] = (
                                q[i, j] if i == j else _SQRT2 * q[i, j]
                            )
                            idx += 1
                break
        out_div[p] = 1 if diverged else 0
        out_floor[p] = floor_ct


# ---------------------------------------------------------------------------
# inverse flow


@njit(cache=True, parallel=True)
def riccati_inverse_kernel(
    z0,
    a,
    rmat,
    smat,
    kappa,
    varpi,
    eps,
    dt,
    n_steps,
    rec_steps,
    key,
    path0,
    npaths,
    guard,
    out_z,
    out_div,
):
    r = z0.shape[0]
    n_rec = rec_steps.shape[0]
    sdt = np.sqrt(dt)
    c_ito = eps * eps / 4.0
    for p in prange(npaths):
        path = U64(path0) + U64(p)
        z = z0.copy()
        zinv = np.empty((r, r))
        sqz = np.empty((r, r))
        sigf = np.empty((r, r))
        sigm = np.empty((r, r))
        sqm = np.empty((r, r))
        drift = np.empty((r, r))
        dw = np.empty((r, r))
        noise = np.empty((r, r))
        scr = np.empty((r, r))
        scr2 = np.empty((r, r))
        w = np.empty(r)
        v = np.empty((r, r))
        zbuf = np.empty(r * r)
        diverged = False
        irec = 0
        for k in range(n_steps):
            for i in range(r):
                for j in range(r):
                    scr[i, j] = z[i, j]
            _jacobi_eig(scr, w, v, r)
            wmin = w[0]
            for i in range(1, r):
                if w[i] < wmin:
                    wmin = w[i]
            trz = 0.0
            for i in range(r):
                trz += z[i, i]
            if wmin <= 0.0 or trz > guard or not np.isfinite(trz):
                diverged = True
            else:
                for i in range(r):
                    for j in range(r):
                        accs = 0.0
                        acci = 0.0
                        for l in range(r):
                            accs += v[i, l] * np.sqrt(w[l]) * v[j, l]
                            acci += v[i, l] / w[l] * v[j, l]
                        sqz[i, j] = accs
                        zinv[i, j] = acci
                _sigma_map(zinv, rmat, smat, kappa, varpi, sigf, scr, r)
                # sigm = z sigf z ; trzs = Tr(z sigf)
                trzs = 0.0
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += z[i, l] * sigf[l, j]
                        scr2[i, j] = acc
                        if i == j:
                            trzs += acc
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += scr2[i, l] * z[l, j]
                        sigm[i, j] = acc
                for i in range(r):
                    for j in range(i + 1, r):
                        m = 0.5 * (sigm[i, j] + sigm[j, i])
                        sigm[i, j] = m
                        sigm[j, i] = m
                # drift = -zA - A'z + S - zRz + c(r+2) sigm + c tr(z sigf) z
                for i in range(r):
                    for j in range(r):
                        acc = smat[i, j]
                        for l in range(r):
                            acc -= z[i, l] * a[l, j] + a[l, i] * z[l, j]
                        drift[i, j] = acc
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += z[i, l] * rmat[l, j]
                        scr2[i, j] = acc
                for i in range(r):
                    for j in range(r):
                        acc = 0.0
                        for l in range(r):
                            acc += scr2[i, l] * z[l, j]
                        drift[i, j] += (
                            -acc + c_ito * (r + 2) * sigm[i, j] + c_ito * trzs * z[i, j]
                        )
                if eps > 0.0:
                    _psd_sqrt(sigm, sqm, r, scr, w, v)
                    _fill_normals(key, path, U64(k), U64(0), r * r, zbuf)
                    for i in range(r):
                        for j in range(r):
                            dw[i, j] = zbuf[i * r + j] * sdt
                    _sym_sandwich_noise(sqz, dw, sqm, noise, scr, r)
                    for i in range(r):
                        for j in range(r):
                            z[i, j] += drift[i, j] * dt + eps * noise[i, j]
                else:
                    for i in range(r):
                        for j in range(r):
                            z[i, j] += drift[i, j] * dt
                for i in range(r):
                    for j in range(i + 1, r):
                        m = 0.5 * (z[i, j] + z[j, i])
                        z[i, j] = m
                        z[j, i] = m
            while irec < n_rec and rec_steps[irec] == k + 1:
                for i in range(r):
                    for j in range(r):
                        out_z[p, irec, i, j] = z[i, j]
                irec += 1
            if diverged:
                for jrec in range(irec, n_rec):
                    for i in range(r):
                        for j in range(r):
                            out_z[p, jrec, i, j] = z[i, j]
                break
        out_div[p] = 1 if diverged else 0


# ---------------------------------------------------------------------------
# Dyson-type eigenvalue dynamics (isotropic coefficients)


@njit(inline="always", cache=True)
def _dyson_substep(lam, lnew, r, aa, rr, ss, uu, vv, eps, h, key, path, step, base):
    sh = np.sqrt(h)
    npairs = (r + 1) // 2
    for i in range(r):
        li = lam[i]
        sig_i = uu + vv * li * li
        drift = 2.0 * aa * li + rr - ss * li * li
        rep = 0.0
        for j in range(r):
            if j != i:
                lj = lam[j]
                sig_j = uu + vv * lj * lj
                rep += (li * sig_j + lj * sig_i) / (li - lj)
        drift += eps * eps / 4.0 * rep
        slot = U64(base * npairs + (i >> 1))
        zc, zs = _normal_pair(key, path, step, slot)
        z = zc if (i & 1) == 0 else zs
        lnew[i] = li + drift * h + eps * np.sqrt(max(li * sig_i, 0.0)) * z * sh
    ok = lnew[r - 1] > 0.0
    for i in range(r - 1):
        if lnew[i] <= lnew[i + 1]:
            ok = False
    return ok


@njit(cache=True, parallel=True)
def dyson_kernel(
    lam0,
    aa,
    rr,
    ss,
    uu,
    vv,
    eps,
    dt,
    n_steps,
    rec_steps,
    key,
    path0,
    npaths,
    max_halvings,
    out_lam,
    out_fail,
    out_retries,
):
    r = lam0.shape[0]
    n_rec = rec_steps.shape[0]
    for p in prange(npaths):
        path = U64(path0) + U64(p)
        lam = lam0.copy()
        cur = np.empty(r)
        nxt = np.empty(r)
        retries = 0
        failed = 0
        irec = 0
        for k in range(n_steps):
            accepted = False
            for level in range(max_halvings + 1):
                nsub = 1 << level
                h = dt / nsub
                for i in range(r):
                    cur[i] = lam[i]
                ok = True
                for m in range(nsub):
                    # substep noise block: unique (level, substep) base
                    base = level * 64 + m
                    ok = _dyson_substep(
                        cur, nxt, r, aa, rr, ss, uu, vv, eps, h, key, path, U64(k), base
                    )
                    if not ok:
                        break
                    for i in range(r):
                        cur[i] = nxt[i]
                if ok:
                    for i in range(r):
                        lam[i] = cur[i]
                    accepted = True
                    break
                retries += 1
            if not accepted:
                failed = k + 1
                break
            while irec < n_rec and rec_steps[irec] == k + 1:
                for i in range(r):
                    out_lam[p, irec, i] = lam[i]
                irec += 1
        if failed > 0:
            for jrec in range(irec, n_rec):
                for i in range(r):
                    out_lam[p, jrec, i] = lam[i]
        out_fail[p] = failed
        out_retries[p] = retries
