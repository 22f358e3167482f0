"""Compiled per-unit update kernels for the three-part sampler.

All randomness arrives as pre-drawn arrays indexed ``[unit, ...]`` so a unit's
update depends only on its own slice. The serial and ``prange`` variants of
each sweep therefore give bit-identical results.
"""

from math import exp, lgamma, log, sqrt

import numpy as np
from numba import njit, prange

TARGET_ACCEPT = 0.234
_LOG_SCALE_MIN = -12.0
_LOG_SCALE_MAX = 4.0


@njit(cache=True)
def cholesky(a, out):
    """Lower Cholesky factor of ``a`` into ``out``; returns False if not positive definite."""
    n = a.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0 or not np.isfinite(s):
                    return False
                out[i, i] = sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, n):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def lower_inverse(L):
    n = L.shape[0]
    inv = np.zeros_like(L)
    for i in range(n):
        inv[i, i] = 1.0 / L[i, i]
        for j in range(i):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * inv[k, j]
            inv[i, j] = s / L[i, i]
    return inv


@njit(cache=True)
def spd_inverse(a):
    """Inverse of a symmetric positive definite matrix; returns (inverse, ok)."""
    L = np.empty_like(a)
    if not cholesky(a, L):
        return np.full_like(a, np.nan), False
    Li = lower_inverse(L)
    return Li.T @ Li, True


def log_factorial_table(n_max: int) -> np.ndarray:
    """log(n!) for n = 0..n_max."""
    return np.array([lgamma(n + 1.0) for n in range(int(n_max) + 1)])


@njit(cache=True)
def _row_log_theta(w, R, Cm1, out):
    for r in range(R):
        mx = 0.0
        for c in range(Cm1):
            if w[r * Cm1 + c] > mx:
                mx = w[r * Cm1 + c]
        s = exp(-mx)
        for c in range(Cm1):
            s += exp(w[r * Cm1 + c] - mx)
        lse = mx + log(s)
        for c in range(Cm1):
            out[r, c] = w[r * Cm1 + c] - lse
        out[r, Cm1] = -lse


@njit(cache=True)
def log_target(w, N, mu, prec):
    R, C = N.shape
    Cm1 = C - 1
    lt = np.empty((R, C))
    _row_log_theta(w, R, Cm1, lt)
    ll = 0.0
    for r in range(R):
        for c in range(C):
            if N[r, c] != 0:
                ll += N[r, c] * lt[r, c]
    D = w.shape[0]
    q = 0.0
    for a in range(D):
        da = w[a] - mu[a]
        s = 0.0
        for b in range(D):
            s += prec[a, b] * (w[b] - mu[b])
        q += da * s
    return ll - 0.5 * q


@njit(cache=True)
def _field(bits, k, n):
    # k-th 10-bit field of a 64-bit word, mapped to {0, ..., n-1}
    return ((bits >> np.uint64(10 * k)) & np.uint64(1023)) * np.uint64(n) >> np.uint64(10)


@njit(cache=True)
def counts_unit(N, K, w, bits, u, delta_max, lf):
    """Margin-preserving +/-delta swap moves on one unit's table; returns accepted count.

    Each move reads its rows, columns, step size and sign from one 64-bit word
    in ``bits`` and its acceptance uniform from ``u``. ``lf[n]`` must hold
    log(n!) for every n up to the largest cell count.
    """
    R, C = N.shape
    rows_act = np.empty(R, np.int64)
    cols_act = np.empty(C, np.int64)
    nr = 0
    for r in range(R):
        m = 0
        for c in range(C):
            m += N[r, c] - K[r, c]
        if m > 0:
            rows_act[nr] = r
            nr += 1
    nc = 0
    for c in range(C):
        m = 0
        for r in range(R):
            m += N[r, c] - K[r, c]
        if m > 0:
            cols_act[nc] = c
            nc += 1
    if nr < 2 or nc < 2:
        return 0
    lt = np.empty((R, C))
    _row_log_theta(w, R, C - 1, lt)
    accepted = 0
    for mv in range(bits.shape[0]):
        b = bits[mv]
        i1 = int(_field(b, 0, nr))
        r1 = rows_act[i1]
        r2 = rows_act[(i1 + 1 + int(_field(b, 1, nr - 1))) % nr]
        j1 = int(_field(b, 2, nc))
        c1 = cols_act[j1]
        c2 = cols_act[(j1 + 1 + int(_field(b, 3, nc - 1))) % nc]
        s = 1 + int(_field(b, 4, delta_max))
        # the sign must be fair for the proposal to be symmetric
        if (b >> np.uint64(63)) & np.uint64(1):
            s = -s
        ma = N[r1, c1] - K[r1, c1]
        mb = N[r2, c2] - K[r2, c2]
        mc = N[r1, c2] - K[r1, c2]
        md = N[r2, c1] - K[r2, c1]
        if ma + s < 0 or mb + s < 0 or mc - s < 0 or md - s < 0:
            continue
        dl = s * (lt[r1, c1] + lt[r2, c2] - lt[r1, c2] - lt[r2, c1])
        dl -= lf[ma + s] - lf[ma] + lf[mb + s] - lf[mb]
        dl -= lf[mc - s] - lf[mc] + lf[md - s] - lf[md]
        if log(u[mv]) < dl:
            N[r1, c1] += s
            N[r2, c2] += s
            N[r1, c2] -= s
            N[r2, c1] -= s
            accepted += 1
    return accepted


def _counts_sweep(N, K, omega, bits, U, delta_max, lf, accepted):
    I = N.shape[0]
    for i in prange(I):
        accepted[i] += counts_unit(N[i], K[i], omega[i], bits[i], U[i], delta_max, lf)


def _omega_sweep(N, omega, mu, prec, chol, log_scale, Z, U, alpha, accepted):
    I, D = omega.shape
    for i in prange(I):
        w = omega[i]
        scale = exp(log_scale[i])
        prop = np.empty(D)
        for a in range(D):
            s = 0.0
            for b in range(a + 1):
                s += chol[a, b] * Z[i, b]
            prop[a] = w[a] + scale * s
        dl = log_target(prop, N[i], mu, prec) - log_target(w, N[i], mu, prec)
        alpha[i] = 1.0 if dl >= 0.0 else exp(dl)
        if log(U[i]) < dl:
            for a in range(D):
                w[a] = prop[a]
            accepted[i] += 1


counts_sweep = njit(cache=True)(_counts_sweep)
counts_sweep_parallel = njit(cache=True, parallel=True)(_counts_sweep)
omega_sweep = njit(cache=True)(_omega_sweep)
omega_sweep_parallel = njit(cache=True, parallel=True)(_omega_sweep)


@njit(cache=True)
def draw_mu(omega, sigma, k0inv, k0inv_mu0, z):
    """mu | Sigma, omega from its normal full conditional. Returns (mu, ok)."""
    I, D = omega.shape
    sinv, ok = spd_inverse(sigma)
    if not ok:
        return np.full(D, np.nan), False
    prec = k0inv + I * sinv
    lam, ok = spd_inverse(prec)
    if not ok:
        return np.full(D, np.nan), False
    tot = omega.sum(axis=0)
    mean = lam @ (k0inv_mu0 + sinv @ tot)
    L = np.empty_like(lam)
    cholesky(lam, L)
    return mean + L @ z, True


@njit(cache=True)
def scatter(omega, mu, psi0):
    I, D = omega.shape
    S = psi0.copy()
    for i in range(I):
        for a in range(D):
            da = omega[i, a] - mu[a]
            for b in range(D):
                S[a, b] += da * (omega[i, b] - mu[b])
    return S


@njit(cache=True)
def inv_wishart(S, chi2, zlow):
    """Draw from Inv-Wishart(df, S) by Bartlett decomposition of the Wishart precision.

    ``chi2[j]`` must be a chi-square draw with ``df - j`` degrees of freedom and
    ``zlow`` a D x D array of standard normals (only the strict lower triangle is used).
    Returns (sigma, n_jitter).
    """
    D = S.shape[0]
    jitter = 0
    S = S.copy()
    Sinv, ok = spd_inverse(S)
    while not ok and jitter < 20:
        tr = 0.0
        for a in range(D):
            tr += S[a, a]
        for a in range(D):
            S[a, a] += 1e-10 * max(tr, 1.0) * 10.0**jitter
        jitter += 1
        Sinv, ok = spd_inverse(S)
    L = np.empty_like(S)
    cholesky(Sinv, L)
    A = np.zeros_like(S)
    for a in range(D):
        A[a, a] = sqrt(chi2[a])
        for b in range(a):
            A[a, b] = zlow[a, b]
    LA = L @ A
    LAi = lower_inverse(LA)
    sigma = LAi.T @ LAi
    for a in range(D):
        for b in range(a):
            v = 0.5 * (sigma[a, b] + sigma[b, a])
            sigma[a, b] = v
            sigma[b, a] = v
    return sigma, jitter


@njit(cache=True)
def margin_violations(N, K, rows, cols):
    """Number of units whose counts break a margin or fall below the survey counts."""
    I, R, C = N.shape
    bad = 0
    for i in range(I):
        broken = False
        for r in range(R):
            s = 0
            for c in range(C):
                s += N[i, r, c]
                if N[i, r, c] < K[i, r, c]:
                    broken = True
            if s != rows[i, r]:
                broken = True
        for c in range(C):
            s = 0
            for r in range(R):
                s += N[i, r, c]
            if s != cols[i, c]:
                broken = True
        if broken:
            bad += 1
    return bad


@njit(cache=True)
def run_block(
    N, K, omega, mu, sigma, log_scale,
    counts_acc, omega_acc, alpha_sum,
    B_counts, U_counts, Z_omega, U_omega, Z_mu, CHI2, Z_bart,
    k0inv, k0inv_mu0, psi0, delta_max, lf,
    sweep0, n_burnin, thin, adapt, do_hyper, check, rows, cols,
    rec_totals, rec_mu, rec_sigma, rec_pos, parallel,
):
    """Run ``U_counts.shape[0]`` full sweeps (counts, omega, hyper) in place.

    Returns (records written so far, margin violations, jitter events).
    """
    B = U_counts.shape[0]
    I, R, C = N.shape
    D = omega.shape[1]
    violations = 0
    jitters = 0
    alpha = np.empty(I)
    chol = np.empty((D, D))
    for b in range(B):
        t = sweep0 + b
        post = t >= n_burnin
        # Acceptance counters only accumulate after burn-in.
        cacc = np.zeros(I, np.int64)
        oacc = np.zeros(I, np.int64)
        if parallel:
            counts_sweep_parallel(N, K, omega, B_counts[b], U_counts[b], delta_max, lf, cacc)
        else:
            counts_sweep(N, K, omega, B_counts[b], U_counts[b], delta_max, lf, cacc)

        prec, ok = spd_inverse(sigma)
        cholesky(sigma, chol)
        if parallel:
            omega_sweep_parallel(N, omega, mu, prec, chol, log_scale, Z_omega[b], U_omega[b], alpha, oacc)
        else:
            omega_sweep(N, omega, mu, prec, chol, log_scale, Z_omega[b], U_omega[b], alpha, oacc)
        if adapt and not post:
            gain = (t + 1.0) ** -0.6
            for i in range(I):
                v = log_scale[i] + gain * (alpha[i] - TARGET_ACCEPT)
                log_scale[i] = min(max(v, _LOG_SCALE_MIN), _LOG_SCALE_MAX)
        if post:
            for i in range(I):
                counts_acc[i] += cacc[i]
                omega_acc[i] += oacc[i]
                alpha_sum[i] += alpha[i]

        if do_hyper:
            new_mu, ok = draw_mu(omega, sigma, k0inv, k0inv_mu0, Z_mu[b])
            for a in range(D):
                mu[a] = new_mu[a]
            S = scatter(omega, mu, psi0)
            new_sigma, jit = inv_wishart(S, CHI2[b], Z_bart[b])
            jitters += jit
            for a in range(D):
                for c in range(D):
                    sigma[a, c] = new_sigma[a, c]

        if check:
            violations += margin_violations(N, K, rows, cols)

        if post and (t - n_burnin + 1) % thin == 0:
            for r in range(R):
                for c in range(C):
                    s = 0
                    for i in range(I):
                        s += N[i, r, c]
                    rec_totals[rec_pos, r, c] = s
            for a in range(D):
                rec_mu[rec_pos, a] = mu[a]
                for c in range(D):
                    rec_sigma[rec_pos, a, c] = sigma[a, c]
            rec_pos += 1
    return rec_pos, violations, jitters
