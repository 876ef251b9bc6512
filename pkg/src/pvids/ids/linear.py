"""L1-regularized logistic regression by accelerated proximal gradient."""
from __future__ import annotations

import numpy as np


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logloss(z, y):
    # mean of log(1 + e^z) - y z, computed stably
    return np.mean(np.logaddexp(0.0, z) - y * z)


class L1Logistic:
    """Minimizes C * sum(logloss) + ||w||_1 (intercept unpenalized).

    Internally the objective is divided by C*n, so the stopping rule is a
    bound on the proximal-gradient mapping of the mean loss.
    """

    def __init__(self, C=100.0, max_iter=1000, tol=1e-6):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol
        self.coef = None
        self.intercept = 0.0
        self.n_iter = 0
        self.converged = False

    def _objective(self, X, y, w, b, lam):
        return _logloss(X @ w + b, y) + lam * np.abs(w).sum()

    def fit(self, X, y) -> "L1Logistic":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        lam = 1.0 / (self.C * n)
        # Lipschitz bound of the mean-loss gradient, intercept column included
        Xa = np.column_stack([X, np.ones(n)])
        L = np.linalg.norm(Xa, 2) ** 2 / (4.0 * n)
        step = 1.0 / L
        theta = np.zeros(d + 1)
        z = theta.copy()
        t = 1.0
        f_prev = np.inf
        self.converged = False
        for it in range(1, self.max_iter + 1):
            g = Xa.T @ (_sigmoid(Xa @ z) - y) / n
            nxt = z - step * g
            nxt[:d] = np.sign(nxt[:d]) * np.maximum(np.abs(nxt[:d]) - step * lam, 0.0)
            # gradient mapping at z; zero exactly at the optimum
            gmap = np.max(np.abs(z - nxt)) / step
            f = self._objective(X, y, nxt[:d], nxt[d], lam)
            if f > f_prev:  # adaptive restart keeps the iteration monotone
                t = 1.0
                z = theta.copy()
                continue
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            z = nxt + ((t - 1) / t_new) * (nxt - theta)
            theta, t, f_prev = nxt, t_new, f
            self.n_iter = it
            if gmap <= self.tol:
                self.converged = True
                break
        self.coef = theta[:d].copy()
        self.intercept = float(theta[d])
        return self

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def score(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def to_dict(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept, "n_iter": self.n_iter,
                "converged": self.converged}

    def load(self, d):
        self.coef = np.asarray(d["coef"], dtype=float)
        self.intercept = float(d["intercept"])
        self.n_iter = int(d.get("n_iter", 0))
        self.converged = bool(d.get("converged", False))
        return self
