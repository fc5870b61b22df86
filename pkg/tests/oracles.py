"""Independent reference computations used as test oracles.

Nothing here calls into the code paths it is used to check.
"""
import itertools
from fractions import Fraction

import numpy as np
from scipy import stats


def poisson_gof_pvalue(x, lam, min_expected=5.0):
    """Chi-square goodness of fit against Poisson(lam), pooling sparse tails."""
    N = len(x)
    hi = int(stats.poisson.ppf(1 - 1e-9, lam)) + 1
    ks = np.arange(hi + 1)
    expected = stats.poisson.pmf(ks, lam) * N
    observed = np.array([np.sum(x == k) for k in ks], dtype=float)
    expected[-1] += stats.poisson.sf(hi, lam) * N
    observed[-1] += np.sum(x > hi)
    # pool from both ends until each cell has enough mass
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    cells_o[-1] += acc_o
    cells_e[-1] += acc_e
    cells_e = np.array(cells_e) * (N / np.sum(cells_e))
    return stats.chisquare(cells_o, cells_e).pvalue


def lambda_expanded(phi, F):
    """Rosette intensities written out term by term (no recursion).

    Works with floats or Fractions.  ``F`` is ``F[0..n-1]``.
    """
    a, g, bm, bu, bs, bt = phi
    out = [bs + bt]
    n = len(F)
    if n >= 1:
        out.append(bm * F[0] + (a * bs + g * bt + bu))
    for i in range(2, n + 1):
        lagged = sum(a ** (i - 2 - j) * F[j] for j in range(i - 1))
        geo = sum(a**k for k in range(i - 1))  # (1 - a**(i-1)) / (1 - a)
        c_i = a**i * bs + a ** (i - 1) * g * bt + g * bu * geo + bu
        out.append(bm * F[i - 1] + g * bm * lagged + c_i)
    return out


def lambda_gradient_fd(phi, F, rel_step=Fraction(1, 10**6)):
    """Central differences of :func:`lambda_expanded` in exact rational arithmetic.

    Returns an ``(n+1, 6)`` float array; the only error is the O(h**2) truncation.
    """
    phi = [Fraction(x) for x in phi]
    F = [Fraction(int(f)) for f in F]
    rows = [[None] * 6 for _ in range(len(F) + 1)]
    for p in range(6):
        h = rel_step * max(Fraction(1), abs(phi[p]))
        up = list(phi)
        dn = list(phi)
        up[p] += h
        dn[p] -= h
        lu = lambda_expanded(up, F)
        ld = lambda_expanded(dn, F)
        for i in range(len(F) + 1):
            rows[i][p] = float((lu[i] - ld[i]) / (2 * h))
    return np.array(rows)


def seed_transition_pmf_bruteforce(s, t, s_next, r, a, b, a_prime, b_prime):
    """P(S' = s_next, R = r | s, t) by enumerating every multinomial outcome."""
    total = 0.0
    for j_old, l_old in itertools.product(range(s + 1), repeat=2):
        if j_old + l_old > s:
            continue
        j_new, l_new = s_next - j_old, r - l_old
        if j_new < 0 or l_new < 0 or j_new + l_new > t:
            continue
        total += stats.multinomial.pmf([j_old, l_old, s - j_old - l_old], s, [a, b, 1 - a - b]) * \
            stats.multinomial.pmf([j_new, l_new, t - j_new - l_new], t, [a_prime, b_prime, 1 - a_prime - b_prime])
    return total


def bank_conditional_mean_bruteforce(s, t, r, a, b, a_prime, b_prime):
    """E[S' | s, t, R = r] from the joint pmf."""
    weights = [seed_transition_pmf_bruteforce(s, t, k, r, a, b, a_prime, b_prime) for k in range(s + t + 1)]
    total = sum(weights)
    return sum(k * w for k, w in enumerate(weights)) / total
