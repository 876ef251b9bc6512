"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np


def ybus(model) -> np.ndarray:
    n = model.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in model.closed_branches():
        y = 1.0 / (complex(br.r, br.x) / model.z_base)
        i, j = br.from_bus - 1, br.to_bus - 1
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def newton_raphson(model, p_kw, q_kvar, tol=1e-10, max_iter=30):
    """Polar Newton-Raphson with bus 1 as a 1.0 pu slack.

    Returns (complex voltages, loss kW, loss kvar, iterations).
    """
    Y = ybus(model)
    s_base = model.base_mva * 1000.0
    s_spec = (np.asarray(p_kw) + 1j * np.asarray(q_kvar)) / s_base
    n = model.n_bus
    pq = np.arange(1, n)
    vm = np.ones(n)
    va = np.zeros(n)
    for it in range(1, max_iter + 1):
        V = vm * np.exp(1j * va)
        I = Y @ V
        mis = V * np.conj(I) - s_spec
        f = np.r_[mis.real[pq], mis.imag[pq]]
        if np.max(np.abs(f)) < tol:
            break
        dS_dva = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
        vn = V / np.abs(V)
        dS_dvm = np.diag(V) @ np.conj(Y @ np.diag(vn)) + np.conj(np.diag(I)) @ np.diag(vn)
        J = np.block([
            [dS_dva.real[np.ix_(pq, pq)], dS_dvm.real[np.ix_(pq, pq)]],
            [dS_dva.imag[np.ix_(pq, pq)], dS_dvm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -f)
        va[pq] += dx[: n - 1]
        vm[pq] += dx[n - 1:]
    else:
        raise RuntimeError("oracle did not converge")
    V = vm * np.exp(1j * va)
    s = V * np.conj(Y @ V)
    loss = s.sum() * s_base
    return V, float(loss.real), float(loss.imag), it


def knn_brute(X_train, y_train, X, k):
    """Plain double loop with a (distance, index) sort key."""
    out = []
    for x in X:
        d = [(float(np.sqrt(((x - r) ** 2).sum())), i) for i, r in enumerate(X_train)]
        d.sort()
        out.append([i for _, i in d[:k]])
    return np.array(out)


def bisect(f, lo, hi, tol=1e-12):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
