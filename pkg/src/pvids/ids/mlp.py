"""Multilayer perceptron: tanh hidden layers, sigmoid output, Adam with step halving."""
from __future__ import annotations

import numpy as np


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MLP:
    def __init__(self, hidden=(50, 100, 50), alpha=1e-4, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 batch_size=200, max_iter=1000, tol=1e-4, halve_after=2, stop_after=10, min_lr=1e-6):
        self.hidden = tuple(hidden)
        self.alpha = alpha
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.tol = tol
        self.halve_after = halve_after
        self.stop_after = stop_after
        self.min_lr = min_lr
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        self.loss_curve: list[float] = []

    def init_params(self, d, rng):
        sizes = [d, *self.hidden, 1]
        self.W, self.b = [], []
        for a, c in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (a + c))
            self.W.append(rng.uniform(-bound, bound, size=(a, c)))
            self.b.append(rng.uniform(-bound, bound, size=c))

    def _forward(self, X):
        acts = [X]
        h = X
        for W, b in zip(self.W[:-1], self.b[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        z = (h @ self.W[-1] + self.b[-1])[:, 0]
        return acts, z

    def loss_grad(self, X, y):
        """Mean log-loss + alpha/(2n) * sum ||W||^2 and its gradients."""
        n = len(X)
        acts, z = self._forward(X)
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        loss += 0.5 * self.alpha * sum((W * W).sum() for W in self.W) / n
        delta = ((_sigmoid(z) - y) / n)[:, None]
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        for i in range(len(self.W) - 1, -1, -1):
            gW[i] = acts[i].T @ delta + self.alpha * self.W[i] / n
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.W[i].T) * (1.0 - acts[i] ** 2)
        return loss, gW, gb

    def fit(self, X, y, seed=0) -> "MLP":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(seed)
        n, d = X.shape
        self.init_params(d, rng)
        params = self.W + self.b
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        t = 0
        lr = self.lr
        best = np.inf
        stale = 0
        bs = min(self.batch_size, n)
        self.loss_curve = []
        for _ in range(self.max_iter):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, bs):
                sel = order[s:s + bs]
                loss, gW, gb = self.loss_grad(X[sel], y[sel])
                total += loss * len(sel)
                t += 1
                c1 = 1 - self.beta1**t
                c2 = 1 - self.beta2**t
                for j, (p, g) in enumerate(zip(params, gW + gb)):
                    m[j] = self.beta1 * m[j] + (1 - self.beta1) * g
                    v[j] = self.beta2 * v[j] + (1 - self.beta2) * g * g
                    p -= lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + self.eps)
            epoch = total / n
            self.loss_curve.append(epoch)
            if epoch < best - self.tol:
                best = epoch
                stale = 0
            else:
                stale += 1
                if stale % self.halve_after == 0:
                    lr *= 0.5
            if stale >= self.stop_after or lr < self.min_lr:
                break
        return self

    def score(self, X) -> np.ndarray:
        return _sigmoid(self._forward(np.asarray(X, dtype=float))[1])

    def to_dict(self):
        return {"W": [w.tolist() for w in self.W], "b": [b.tolist() for b in self.b],
                "epochs": len(self.loss_curve)}

    def load(self, d):
        self.W = [np.asarray(w, dtype=float) for w in d["W"]]
        self.b = [np.asarray(b, dtype=float) for b in d["b"]]
        return self
