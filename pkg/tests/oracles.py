"""Slow, independent reference implementations used only by the tests.

None of these call into LAPACK or the package; they are loops over Python
floats so a shared bug is unlikely.
"""

from __future__ import annotations

import cmath
import itertools
import math


def frobenius(a, b):
    s = 0.0
    for i in range(len(a)):
        for j in range(len(a[0])):
            s += (a[i][j] - b[i][j]) ** 2
    return math.sqrt(s)


def manhattan(a, b):
    s = 0.0
    for i in range(len(a)):
        for j in range(len(a[0])):
            s += abs(a[i][j] - b[i][j])
    return s


def chebyshev(a, b):
    best = 0.0
    for i in range(len(a)):
        for j in range(len(a[0])):
            best = max(best, abs(a[i][j] - b[i][j]))
    return best


def _matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def charpoly(a):
    """Faddeev-LeVerrier: coefficients c_0..c_n of det(lambda I - A), c_0 = 1."""
    n = len(a)
    coeffs = [1.0]
    m = [[0.0] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{k-1} I
        am = _matmul(a, m)
        m = [[am[i][j] + (coeffs[-1] if i == j else 0.0) for j in range(n)] for i in range(n)]
        amk = _matmul(a, m)
        coeffs.append(-sum(amk[i][i] for i in range(n)) / k)
    return coeffs


def poly_roots(coeffs, iters=500):
    """Durand-Kerner on a monic polynomial, then a few Newton polish steps."""
    n = len(coeffs) - 1

    def p(z):
        v = 0j
        for c in coeffs:
            v = v * z + c
        return v

    def dp(z):
        v = 0j
        for k, c in enumerate(coeffs[:-1]):
            v = v * z + c * (n - k)
        return v

    bound = 1.0 + max(abs(c) for c in coeffs[1:])
    roots = [bound * cmath.exp(2j * math.pi * (k + 0.25) / n) * 0.9 for k in range(n)]
    for _ in range(iters):
        new = []
        for i, r in enumerate(roots):
            den = 1 + 0j
            for j, s in enumerate(roots):
                if i != j:
                    den *= r - s
            new.append(r - p(r) / den)
        roots = new
    out = []
    for r in roots:
        for _ in range(5):
            d = dp(r)
            if d == 0:
                break
            r = r - p(r) / d
        out.append(r)
    return out


def symmetric_eigenvalues(a):
    """Real eigenvalues of a symmetric matrix via its characteristic polynomial, descending."""
    return sorted((r.real for r in poly_roots(charpoly(a))), reverse=True)


def spectral(a, b):
    ea, eb = symmetric_eigenvalues(a), symmetric_eigenvalues(b)
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(ea, eb)))


def nuclear_symmetric(a, b):
    d = [[a[i][j] - b[i][j] for j in range(len(a))] for i in range(len(a))]
    return sum(abs(x) for x in symmetric_eigenvalues(d))


def _components(n, edges):
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, count = set(), 0
    for s in range(n):
        if s in seen:
            continue
        count += 1
        stack = [s]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack.extend(adj[u])
    return count


def filtration(c):
    """Birth and death multisets by sweeping every distinct threshold downward.

    At each threshold tau the graph keeps edges with weight >= tau. A drop in
    the component count records tau as a birth (once per merge); a rise in
    the cycle rank (edges - n + components) records tau as a death.
    """
    n = len(c)
    edges = [(i, j, c[i][j]) for i in range(n) for j in range(i + 1, n)]
    births, deaths = [], []
    prev_comp, prev_rank = n, 0
    for tau in sorted({w for _, _, w in edges}, reverse=True):
        kept = [(i, j) for i, j, w in edges if w >= tau]
        comp = _components(n, kept)
        rank = len(kept) - n + comp
        births += [tau] * (prev_comp - comp)
        deaths += [tau] * (rank - prev_rank)
        prev_comp, prev_rank = comp, rank
    return sorted(births, reverse=True), sorted(deaths, reverse=True)


def bijection_wasserstein(x, y, p=2.0):
    """Minimum over all bijections of (sum |x_i - y_pi(i)|^p)^(1/p)."""
    if not x:
        return 0.0
    best = min(sum(abs(a - b) ** p for a, b in zip(x, perm)) for perm in itertools.permutations(y))
    return best ** (1.0 / p)


def quantile7(values, q):
    """Type-7 sample quantile: interpolate order statistics at 1 + q(n-1)."""
    xs = sorted(values)
    h = (len(xs) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def patches(x, length, stride):
    out, start = [], 0
    while start + length <= len(x):
        out.append(list(x[start : start + length]))
        start += stride
    return out


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def cross_attention(xhat, protos, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Per-head loops: queries from patches, keys/values from prototypes."""

    def lin(rows, w, b):
        return [[sum(r[t] * w[t][j] for t in range(len(r))) + b[j] for j in range(len(b))] for r in rows]

    q, k, v = lin(xhat, wq, bq), lin(protos, wk, bk), lin(protos, wv, bv)
    d_h = len(bq)
    dk = d_h // heads
    out = [[0.0] * d_h for _ in xhat]
    for h in range(heads):
        cols = range(h * dk, (h + 1) * dk)
        for i, qi in enumerate(q):
            scores = [sum(qi[c] * kj[c] for c in cols) / math.sqrt(dk) for kj in k]
            w = softmax(scores)
            for c in cols:
                out[i][c] = sum(w[j] * v[j][c] for j in range(len(k)))
    return lin(out, wo, bo)
