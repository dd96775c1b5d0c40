"""Compiled inner loops for the Metropolis-within-Gibbs sampler.

Everything here works on plain arrays:

    H        int8 (K, T) event codes 0..4 of the compatible true histories
    first    int64 (K,) 0-based first-capture occasion of each history
    last     int64 (K,) 0-based last-capture occasion
    f        int64 (L,) observed counts; histories 0..L-1 of H are the observed ones
    lpar     int64 (C,) left parent of child L+c
    rpar     int64 (C,) right parent of child L+c
    logrho5  float (5,) log event probabilities indexed by event code (slot 0 unused)

Transformed parameters are logit(phi), logit(p), log(gamma). Hyperparameters
are ordered (phi, p, gamma) in ``mu`` and ``sig``.
"""
import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_CACHE_MISMATCH = 2
STATUS_CONSTRAINT = 3

# rows of the sufficient-statistic matrix
S_FIRST, S_LAST, S_SURV, S_CAP, S_MISS, S_EVENT = 0, 1, 2, 3, 4, 5


@njit(cache=True)
def log_expit(v):
    if v >= 0.0:
        return -math.log1p(math.exp(-v))
    return v - math.log1p(math.exp(v))


@njit(cache=True)
def expit(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def kappa_chi(phi, p, gam):
    """First-capture weights and never-seen-again probabilities.

    ``u`` tracks the expected number of present-but-unseen individuals, so
    kappa[t] = p[t] * u[t] is the recursion for kappa without dividing by p.
    """
    T = p.shape[0]
    kap = np.empty(T)
    chi = np.empty(T)
    u = 1.0
    prod = 1.0
    kap[0] = p[0]
    for t in range(1, T):
        u = u * (1.0 - p[t - 1]) * phi[t - 1] + gam[t - 1] * prod
        prod *= phi[t - 1] + gam[t - 1]
        kap[t] = p[t] * u
    chi[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        chi[t] = (1.0 - phi[t]) + phi[t] * (1.0 - p[t + 1]) * chi[t + 1]
    return kap, chi


@njit(cache=True)
def natural(lphi, lp, lgam):
    phi = np.empty(lphi.shape[0])
    p = np.empty(lp.shape[0])
    gam = np.empty(lgam.shape[0])
    for t in range(lphi.shape[0]):
        phi[t] = expit(lphi[t])
        gam[t] = math.exp(lgam[t])
    for t in range(lp.shape[0]):
        p[t] = expit(lp[t])
    return phi, p, gam


@njit(cache=True)
def log_xi_chi(lphi, lp, lgam):
    phi, p, gam = natural(lphi, lp, lgam)
    kap, chi = kappa_chi(phi, p, gam)
    T = lp.shape[0]
    logxi = np.empty(T)
    logchi = np.empty(T)
    total = 0.0
    for t in range(T):
        total += kap[t]
    lt = math.log(total)
    for t in range(T):
        logxi[t] = math.log(kap[t]) - lt
        logchi[t] = math.log(chi[t])
    return logxi, logchi


@njit(cache=True)
def log_cell_probs(H, first, last, lphi, lp, lgam, logrho5, out):
    logxi, logchi = log_xi_chi(lphi, lp, lgam)
    T = lp.shape[0]
    logphi = np.empty(max(T - 1, 1))
    logp = np.empty(T)
    log1mp = np.empty(T)
    for t in range(T - 1):
        logphi[t] = log_expit(lphi[t])
    for t in range(T):
        logp[t] = log_expit(lp[t])
        log1mp[t] = log_expit(-lp[t])
    for k in range(H.shape[0]):
        a = first[k]
        b = last[k]
        v = logxi[a] + logrho5[H[k, a]] + logchi[b]
        for t in range(a + 1, b + 1):
            v += logphi[t - 1]
            e = H[k, t]
            if e != 0:
                v += logp[t] + logrho5[e]
            else:
                v += log1mp[t]
        out[k] = v


@njit(cache=True)
def suff_stats(H, first, last, x):
    """Capture-history sufficient statistics weighted by the latent counts."""
    K, T = H.shape
    S = np.zeros((6, max(T, 5)))
    for k in range(K):
        w = x[k]
        if w == 0:
            continue
        a = first[k]
        b = last[k]
        S[S_FIRST, a] += w
        S[S_LAST, b] += w
        S[S_EVENT, H[k, a]] += w
        for t in range(a + 1, b + 1):
            S[S_SURV, t - 1] += w
            e = H[k, t]
            if e != 0:
                S[S_CAP, t] += w
                S[S_EVENT, e] += w
            else:
                S[S_MISS, t] += w
    return S


@njit(cache=True)
def loglik_stats(S, lphi, lp, lgam, logrho5):
    """sum_k x_k log pi_k evaluated through the sufficient statistics."""
    logxi, logchi = log_xi_chi(lphi, lp, lgam)
    T = lp.shape[0]
    ll = 0.0
    for t in range(T):
        if S[S_FIRST, t] != 0.0:
            ll += S[S_FIRST, t] * logxi[t]
        if S[S_LAST, t] != 0.0:
            ll += S[S_LAST, t] * logchi[t]
        if S[S_CAP, t] != 0.0:
            ll += S[S_CAP, t] * log_expit(lp[t])
        if S[S_MISS, t] != 0.0:
            ll += S[S_MISS, t] * log_expit(-lp[t])
    for t in range(T - 1):
        if S[S_SURV, t] != 0.0:
            ll += S[S_SURV, t] * log_expit(lphi[t])
    for e in range(1, 5):
        if S[S_EVENT, e] != 0.0:
            ll += S[S_EVENT, e] * logrho5[e]
    return ll


@njit(cache=True)
def norm_lpdf(y, m, s):
    z = (y - m) / s
    return -0.5 * LOG_2PI - math.log(s) - 0.5 * z * z


@njit(cache=True)
def halft_lpdf(s, df, scale):
    if s <= 0.0:
        return -np.inf
    z = s / scale
    return (
        math.log(2.0)
        - math.log(scale)
        + math.lgamma(0.5 * (df + 1.0))
        - math.lgamma(0.5 * df)
        - 0.5 * math.log(df * math.pi)
        - 0.5 * (df + 1.0) * math.log1p(z * z / df)
    )


@njit(cache=True)
def log_prior_theta(lphi, lp, lgam, mu, sig, has_rho, mu_var, sig_df, sig_scale):
    lp_ = 0.0
    for t in range(lphi.shape[0]):
        lp_ += norm_lpdf(lphi[t], mu[0], sig[0])
    for t in range(lp.shape[0]):
        lp_ += norm_lpdf(lp[t], mu[1], sig[1])
    for t in range(lgam.shape[0]):
        lp_ += norm_lpdf(lgam[t], mu[2], sig[2])
    for j in range(3):
        lp_ += norm_lpdf(mu[j], 0.0, math.sqrt(mu_var[j]))
        lp_ += halft_lpdf(sig[j], sig_df, sig_scale)
    if has_rho:
        lp_ += math.log(6.0)  # flat Dirichlet(1,1,1,1) density is Gamma(4)
    return lp_


@njit(cache=True)
def log_multinomial_core(x, logpi, lgf):
    N = 0
    v = 0.0
    for k in range(x.shape[0]):
        xk = x[k]
        if xk == 0:
            continue
        if logpi[k] == -np.inf:
            return -np.inf
        N += xk
        v += xk * logpi[k] - lgf[xk]
    return v + lgf[N]


@njit(cache=True)
def log_posterior_core(x, logpi, lgf, lphi, lp, lgam, mu, sig, has_rho, mu_var, sig_df, sig_scale, u_max):
    N = 0
    for k in range(x.shape[0]):
        N += x[k]
    if N < 0 or N > u_max:
        return -np.inf
    return (
        log_multinomial_core(x, logpi, lgf)
        + log_prior_theta(lphi, lp, lgam, mu, sig, has_rho, mu_var, sig_df, sig_scale)
        - math.log(u_max + 1.0)
    )


@njit(cache=True)
def _move_delta(x, k, l, r, d, N, logpi, lgf):
    """Change in log f(x|N,theta) for x_k += d, x_l -= d, x_r -= d, N -= d."""
    return (
        lgf[N - d] - lgf[N]
        - (lgf[x[k] + d] - lgf[x[k]])
        - (lgf[x[l] - d] - lgf[x[l]])
        - (lgf[x[r] - d] - lgf[x[r]])
        + d * (logpi[k] - logpi[l] - logpi[r])
    )


@njit(cache=True)
def latent_sweep_simplified(x, N, logpi, f, lpar, rpar, n_obs, lgf, u_max, rng):
    """One pass over the children, each redrawn uniformly on 0..min(f_l, f_r).

    Returns (N, change in log posterior, substeps, accepted).
    """
    dlp = 0.0
    n_acc = 0
    C = lpar.shape[0]
    for c in range(C):
        k = n_obs + c
        l = lpar[c]
        r = rpar[c]
        hi = min(f[l], f[r])
        prop = rng.integers(0, hi + 1)
        d = prop - x[k]
        if x[l] - d < 0 or x[r] - d < 0:
            continue
        if d == 0:
            n_acc += 1
            continue
        if N - d > u_max:
            continue
        delta = _move_delta(x, k, l, r, d, N, logpi, lgf)
        if math.log(rng.random()) < delta:
            x[k] += d
            x[l] -= d
            x[r] -= d
            N -= d
            dlp += delta
            n_acc += 1
    return N, dlp, C, n_acc


@njit(cache=True)
def latent_sweep_nullspace(x, N, logpi, lpar, rpar, n_obs, D, lgf, u_max, rng):
    """One pass over the basis vectors e_k - e_l(k) - e_r(k), stepping by
    c uniform on {-D..-1, 1..D}."""
    dlp = 0.0
    n_acc = 0
    C = lpar.shape[0]
    for c in range(C):
        k = n_obs + c
        l = lpar[c]
        r = rpar[c]
        step = rng.integers(1, D[c] + 1)
        if rng.random() < 0.5:
            step = -step
        if x[k] + step < 0 or x[l] - step < 0 or x[r] - step < 0:
            continue
        if N - step > u_max:
            continue
        delta = _move_delta(x, k, l, r, step, N, logpi, lgf)
        if math.log(rng.random()) < delta:
            x[k] += step
            x[l] -= step
            x[r] -= step
            N -= step
            dlp += delta
            n_acc += 1
    return N, dlp, C, n_acc


@njit(cache=True)
def constraints_hold(x, f, lpar, rpar, n_obs):
    for k in range(x.shape[0]):
        if x[k] < 0:
            return False
    tot = np.zeros(n_obs, dtype=np.int64)
    for j in range(n_obs):
        tot[j] = x[j]
    for c in range(lpar.shape[0]):
        tot[lpar[c]] += x[n_obs + c]
        tot[rpar[c]] += x[n_obs + c]
    for j in range(n_obs):
        if tot[j] != f[j]:
            return False
    return True


@njit(cache=True)
def _rw_step(arr, t, logstep_i, S, lphi, lp, lgam, logrho5, ll, m, s, rng):
    old = arr[t]
    new = old + math.exp(logstep_i) * rng.normal()
    d_prior = norm_lpdf(new, m, s) - norm_lpdf(old, m, s)
    arr[t] = new
    ll_new = loglik_stats(S, lphi, lp, lgam, logrho5)
    if math.log(rng.random()) < ll_new - ll + d_prior:
        return ll_new, 1
    arr[t] = old
    return ll, 0


@njit(cache=True)
def _sigma_target(arr, m, s, df, scale):
    v = halft_lpdf(s, df, scale) + math.log(s)  # log-scale Jacobian
    for t in range(arr.shape[0]):
        v += norm_lpdf(arr[t], m, s)
    return v


@njit(cache=True)
def _scale_step(arr, mu, sig, j, logstep_i, S, lphi, lp, lgam, logrho5, ll, df, scale, rng):
    """Propose sigma' = sigma * c and stretch the block's deviations from mu by c.

    The standardized deviations are unchanged, so the normal prior terms and
    the stretch Jacobian cancel; what remains is the likelihood ratio, the
    half-t ratio and the log-scale Jacobian c. This lets sigma move without
    waiting for every block member to follow, which a plain random walk on
    log sigma cannot do when the block is tightly pooled.
    """
    old = sig[j]
    c = math.exp(math.exp(logstep_i) * rng.normal())
    m = mu[j]
    n = arr.shape[0]
    saved = arr.copy()
    for t in range(n):
        arr[t] = m + c * (arr[t] - m)
    ll_new = loglik_stats(S, lphi, lp, lgam, logrho5)
    d = ll_new - ll + halft_lpdf(old * c, df, scale) - halft_lpdf(old, df, scale) + math.log(c)
    if math.log(rng.random()) < d:
        sig[j] = old * c
        return ll_new, 1
    arr[:] = saved
    return ll, 0


@njit(cache=True)
def normal_mean_posterior(values, sig, prior_var):
    """Full conditional (mean, sd) of a block mean with a N(0, prior_var) prior."""
    n = values.shape[0]
    prec = 1.0 / prior_var + n / (sig * sig)
    tot = 0.0
    for t in range(n):
        tot += values[t]
    return tot / (sig * sig) / prec, 1.0 / math.sqrt(prec)


@njit(cache=True)
def theta_sweep(S, lphi, lp, lgam, logrho5, rho4, mu, sig, has_rho,
                logstep, acc, mu_var, sig_df, sig_scale, rng):
    """One sweep over every parameter block given the latent sufficient statistics.

    When ``logstep`` carries three extra entries, each block also gets a
    joint scale move after its sigma update (see ``_scale_step``).
    """
    ll = loglik_stats(S, lphi, lp, lgam, logrho5)
    i = 0
    for t in range(lphi.shape[0]):
        ll, a = _rw_step(lphi, t, logstep[i], S, lphi, lp, lgam, logrho5, ll, mu[0], sig[0], rng)
        acc[i] += a
        i += 1
    for t in range(lp.shape[0]):
        ll, a = _rw_step(lp, t, logstep[i], S, lphi, lp, lgam, logrho5, ll, mu[1], sig[1], rng)
        acc[i] += a
        i += 1
    for t in range(lgam.shape[0]):
        ll, a = _rw_step(lgam, t, logstep[i], S, lphi, lp, lgam, logrho5, ll, mu[2], sig[2], rng)
        acc[i] += a
        i += 1

    blocks = (lphi, lp, lgam)
    for j in range(3):
        m, sd = normal_mean_posterior(blocks[j], sig[j], mu_var[j])
        mu[j] = m + sd * rng.normal()

    for j in range(3):
        arr = blocks[j]
        old = sig[j]
        new = old * math.exp(math.exp(logstep[i]) * rng.normal())
        d = _sigma_target(arr, mu[j], new, sig_df, sig_scale) - _sigma_target(arr, mu[j], old, sig_df, sig_scale)
        if math.log(rng.random()) < d:
            sig[j] = new
            acc[i] += 1
        i += 1

    if logstep.shape[0] > i:
        for j in range(3):
            ll, a = _scale_step(blocks[j], mu, sig, j, logstep[i], S, lphi, lp, lgam, logrho5, ll,
                                sig_df, sig_scale, rng)
            acc[i] += a
            i += 1

    if has_rho:
        tot = 0.0
        for e in range(4):
            rho4[e] = rng.gamma(1.0 + S[S_EVENT, e + 1])
            tot += rho4[e]
        for e in range(4):
            rho4[e] /= tot
            logrho5[e + 1] = math.log(rho4[e]) if rho4[e] > 0.0 else -np.inf


@njit(cache=True)
def _record(row, lphi, lp, lgam, rho4, mu, sig, has_rho, N, logpost):
    phi, p, gam = natural(lphi, lp, lgam)
    c = 0
    for t in range(phi.shape[0]):
        row[c] = phi[t]
        c += 1
    for t in range(p.shape[0]):
        row[c] = p[t]
        c += 1
    for t in range(gam.shape[0]):
        row[c] = gam[t]
        c += 1
    for t in range(phi.shape[0]):
        row[c] = phi[t] + gam[t]
        c += 1
    if has_rho:
        for e in range(4):
            row[c] = rho4[e]
            c += 1
    for j in range(3):
        row[c] = mu[j]
        row[c + 1] = sig[j]
        c += 2
    row[c] = N
    row[c + 1] = logpost


@njit(cache=True)
def run_core(H, first, last, f, lpar, rpar, x, lphi, lp, lgam, rho4, mu, sig,
             has_rho, kernel, D, do_theta, do_latent, logstep, adapt_window,
             burn, n_iter, thin, mu_var, sig_df, sig_scale, u_max, rng, debug,
             out, out_lat, acc_theta, lat_counts, fail):
    """Run burn + n_iter sweeps in place.

    ``kernel`` 0 = simplified parent/child, 1 = null-space. Returns a status
    code; on failure ``fail[0]`` holds the sweep number.
    """
    n_obs = f.shape[0]
    K = x.shape[0]
    lgf = np.empty(u_max + 2)
    for i in range(u_max + 2):
        lgf[i] = math.lgamma(i + 1.0)
    logrho5 = np.zeros(5)
    if has_rho:
        for e in range(4):
            logrho5[e + 1] = math.log(rho4[e]) if rho4[e] > 0.0 else -np.inf
    logpi = np.empty(K)
    N = 0
    for k in range(K):
        N += x[k]

    n_scalar = logstep.shape[0]
    win_acc = np.zeros(n_scalar)
    n_window = 0
    n_keep = 0
    total = burn + n_iter
    for it in range(1, total + 1):
        if it == burn + 1:
            for i in range(n_scalar):
                win_acc[i] = 0.0
        if do_theta:
            S = suff_stats(H, first, last, x)
            theta_sweep(S, lphi, lp, lgam, logrho5, rho4, mu, sig, has_rho,
                        logstep, win_acc, mu_var, sig_df, sig_scale, rng)
        log_cell_probs(H, first, last, lphi, lp, lgam, logrho5, logpi)
        logpost = log_posterior_core(x, logpi, lgf, lphi, lp, lgam, mu, sig, has_rho,
                                     mu_var, sig_df, sig_scale, u_max)
        if do_latent and lpar.shape[0] > 0:
            if kernel == 0:
                N, dlp, nsub, nacc = latent_sweep_simplified(x, N, logpi, f, lpar, rpar, n_obs, lgf, u_max, rng)
            else:
                N, dlp, nsub, nacc = latent_sweep_nullspace(x, N, logpi, lpar, rpar, n_obs, D, lgf, u_max, rng)
            logpost += dlp
            lat_counts[0] += nsub
            lat_counts[1] += nacc
        if not math.isfinite(logpost):
            fail[0] = it
            return STATUS_NONFINITE
        if debug:
            if not constraints_hold(x, f, lpar, rpar, n_obs):
                fail[0] = it
                return STATUS_CONSTRAINT
            fresh = log_posterior_core(x, logpi, lgf, lphi, lp, lgam, mu, sig, has_rho,
                                       mu_var, sig_df, sig_scale, u_max)
            if abs(fresh - logpost) > 1e-8 * max(1.0, abs(fresh)):
                fail[0] = it
                return STATUS_CACHE_MISMATCH

        if it <= burn:
            n_window += 1
            if adapt_window > 0 and n_window == adapt_window:
                gain = 1.0 / math.sqrt(it / adapt_window)
                for i in range(n_scalar):
                    logstep[i] += gain * (win_acc[i] / adapt_window - 0.44)
                    win_acc[i] = 0.0
                n_window = 0
        elif (it - burn) % thin == 0:
            _record(out[n_keep], lphi, lp, lgam, rho4, mu, sig, has_rho, N, logpost)
            if out_lat.shape[0] > 0:
                for c in range(lpar.shape[0]):
                    out_lat[n_keep, c] = x[n_obs + c]
            n_keep += 1
    for i in range(n_scalar):
        acc_theta[i] = win_acc[i]
    return STATUS_OK
