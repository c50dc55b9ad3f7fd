from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .forest import TrainingError, check_xy


@dataclass
class LogRegParams:
    C: float = 1.0
    penalty: str = "l2"
    tolerance: float = 1e-6
    max_iter: int = 2000

    def __post_init__(self):
        if self.C <= 0 or self.tolerance <= 0:
            raise ValueError("C and tolerance must be positive")
        if self.penalty not in ("l1", "l2"):
            raise ValueError(f"unknown penalty {self.penalty!r}")


LOGREG_GRID = {"C": [1, 10, 100], "penalty": ["l1", "l2"]}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LogRegModel:
    params: LogRegParams
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray       # on the standardised scale
    intercept: float
    n_iter: int

    def decision_function(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"kind": "logreg", "params": asdict(self.params), "mean": self.mean.tolist(),
                "scale": self.scale.tolist(), "coef": self.coef.tolist(), "intercept": self.intercept,
                "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "LogRegModel":
        return cls(LogRegParams(**d["params"]), np.asarray(d["mean"]), np.asarray(d["scale"]),
                   np.asarray(d["coef"]), float(d["intercept"]), int(d["n_iter"]))


def train_logreg(X, y, p: LogRegParams) -> LogRegModel:
    """Accelerated (proximal) gradient descent on the mean log-loss.

    The objective is ``mean(logloss) + penalty(w) / (C * n)``, which has the
    same minimiser as ``C * sum(logloss) + penalty(w)``. The intercept is
    not penalised. Stops when the norm of the (proximal) gradient mapping
    falls below ``tolerance``.
    """
    X, y = check_xy(X, y)
    n, d = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    yf = y.astype(np.float64)
    lam = 1.0 / (p.C * n)
    # Lipschitz constant of the smooth part
    L = 0.25 * (np.linalg.norm(np.c_[Z, np.ones(n)], 2) ** 2) / n
    if p.penalty == "l2":
        L += lam
    step = 1.0 / L

    theta = np.zeros(d + 1)
    theta[-1] = np.log(yf.mean() / (1 - yf.mean()))
    v = theta.copy()
    t_k = 1.0
    it = 0
    for it in range(1, p.max_iter + 1):
        r = _sigmoid(Z @ v[:-1] + v[-1]) - yf
        grad = np.r_[Z.T @ r, r.sum()] / n
        if p.penalty == "l2":
            grad[:-1] += lam * v[:-1]
        new = v - step * grad
        if p.penalty == "l1":
            w = new[:-1]
            new[:-1] = np.sign(w) * np.maximum(np.abs(w) - step * lam, 0.0)
        if not np.all(np.isfinite(new)):
            raise TrainingError(f"logistic regression diverged at iteration {it}")
        mapping = np.linalg.norm(v - new) / step
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_k * t_k))
        v = new + ((t_k - 1) / t_next) * (new - theta)
        theta, t_k = new, t_next
        if mapping < p.tolerance:
            break
    return LogRegModel(p, mean, scale, theta[:-1].copy(), float(theta[-1]), it)
