"""Reference implementations that share no code with the package.

Each oracle takes the textbook route (explicit loops, pseudoinverses,
quadrature) so that agreement with the package is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special


def sample_sd(xs) -> float:
    """Two-pass sample standard deviation with an n - 1 denominator."""
    xs = [float(x) for x in xs]
    n = len(xs)
    mean = sum(xs) / n
    ss = 0.0
    for x in xs:
        ss += (x - mean) ** 2
    return math.sqrt(ss / (n - 1))


def repeat_share(current: dict, previous: dict, tol: float = 1e-9) -> float:
    both = [k for k in current if k in previous]
    same = sum(1 for k in both if abs(current[k] - previous[k]) <= tol)
    return same / len(both)


def ape(f: float, x: float) -> float:
    return abs(f - x) / abs(x)


def mae(fs, xs) -> float:
    return sum(abs(f - x) for f, x in zip(fs, xs)) / len(fs)


def inverse_mae_combination(current: dict, window_mae: dict, eps: float = 1e-6) -> float:
    """Weights proportional to 1 / (MAE + eps), normalised."""
    raw = {k: 1.0 / (window_mae[k] + eps) for k in current}
    total = sum(raw.values())
    return sum(current[k] * raw[k] / total for k in current)


def ols_pinv(X, y) -> np.ndarray:
    return np.linalg.pinv(np.asarray(X, float)) @ np.asarray(y, float)


def cr1_bruteforce(X, u, clusters) -> np.ndarray:
    """Sandwich built cluster by cluster with explicit outer products."""
    X = np.asarray(X, float)
    u = np.asarray(u, float)
    n, k = X.shape
    bread = np.linalg.pinv(X.T @ X)
    labels = sorted(set(clusters.tolist() if hasattr(clusters, "tolist") else clusters))
    meat = np.zeros((k, k))
    for g in labels:
        idx = [i for i in range(n) if clusters[i] == g]
        s = np.zeros(k)
        for i in idx:
            s += X[i] * u[i]
        meat += np.outer(s, s)
    G = len(labels)
    c = G / (G - 1) * (n - 1) / (n - k)
    return c * bread @ meat @ bread


def hc1_scaled(X, u) -> np.ndarray:
    """White sandwich with observation-level scores, times the CR1 factor at G = n."""
    X = np.asarray(X, float)
    u = np.asarray(u, float)
    n, k = X.shape
    bread = np.linalg.pinv(X.T @ X)
    meat = sum(np.outer(X[i] * u[i], X[i] * u[i]) for i in range(n))
    return n / (n - 1) * (n - 1) / (n - k) * bread @ meat @ bread


def t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided p-value by integrating the Student-t density numerically."""
    c = math.exp(special.gammaln((dof + 1) / 2) - special.gammaln(dof / 2)) / math.sqrt(dof * math.pi)
    dens = lambda x: c * (1 + x * x / dof) ** (-(dof + 1) / 2)
    tail, _ = integrate.quad(dens, abs(t), np.inf)
    return 2 * tail


def rule_based_series(cells: dict, truth: dict, targets, kappa=0.25, eps=1e-6, penalty=0.5, window=3) -> dict:
    """All-components combination written straight from the rules, over integer quarter indices.

    ``cells`` maps (quarter_index, forecaster) -> forecast, ``truth`` maps quarter_index -> value.
    """
    out = {}
    for t in targets:
        cur = {f: v for (q, f), v in cells.items() if q == t}
        prior = list(range(t - window, t))
        tv = [truth[q] for q in prior if q in truth]
        if not tv:
            out[t] = sum(cur.values()) / len(cur)
            continue
        err = {}
        for f in cur:
            e = [abs(cells[(q, f)] - truth[q]) for q in prior if (q, f) in cells and q in truth]
            if e:
                err[f] = sum(e) / len(e)
        if err:
            raw = {f: 1 / (err[f] + eps) for f in err}
            fill = sum(raw.values()) / len(raw)
            raw = {f: raw.get(f, fill) for f in cur}
            ordered_err = sorted(err.values())
            m = len(ordered_err)
            med = ordered_err[m // 2] if m % 2 else (ordered_err[m // 2 - 1] + ordered_err[m // 2]) / 2
            for f in err:
                if err[f] <= med:
                    continue
                hits = 0
                for q in range(t - window, t):
                    # revision from q to q+1 against the realized move from q-1 to q
                    if (q, f) not in cells or (q + 1, f) not in cells or q not in truth or q - 1 not in truth:
                        continue
                    if q - 1 < t - window:
                        continue  # the earlier outcome lies outside the window
                    rev = np.sign(cells[(q + 1, f)] - cells[(q, f)])
                    move = np.sign(truth[q] - truth[q - 1])
                    hits += rev != 0 and rev == move
                if hits >= 2:
                    raw[f] *= penalty
            total = sum(raw.values())
            base = sum(cur[f] * raw[f] / total for f in cur)
        else:
            base = sum(cur.values()) / len(cur)
        out[t] = base + kappa * (tv[-1] - sum(tv) / len(tv))
    return out
