"""Gaussian-emission hidden Markov models.

Forward/backward use per-step scaling (Rabiner). Emission densities are
evaluated in log space and shifted by their per-step maximum before
exponentiation, so the scaled recursions never underflow for Gaussian
emissions; the shift is folded back into the log-likelihood.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

VAR_FLOOR_STD = 1e-3
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 200
LOG1P = "log1p"

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class HmmError(ValueError):
    pass


@dataclass
class GaussianHmm:
    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    transform_tag: str = LOG1P
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.trans = np.atleast_2d(np.asarray(self.trans, dtype=np.float64))
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        k = self.pi.shape[0]
        if self.trans.shape != (k, k) or self.means.shape != (k,) or self.stds.shape != (k,):
            raise HmmError(f"inconsistent parameter shapes for {k} states")

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    def check(self, atol: float = 1e-9) -> None:
        """Raise HmmError if any structural invariant is violated."""
        params = (self.pi, self.trans, self.means, self.stds)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise HmmError("non-finite parameter")
        if abs(self.pi.sum() - 1.0) > atol or np.any(self.pi < 0):
            raise HmmError("initial distribution is not a probability vector")
        if np.any(np.abs(self.trans.sum(axis=1) - 1.0) > atol) or np.any(self.trans < 0):
            raise HmmError("transition matrix is not row-stochastic")
        if np.any(self.stds < VAR_FLOOR_STD):
            raise HmmError("std below variance floor")

    def permuted(self, perm: Sequence[int]) -> "GaussianHmm":
        """Same model with hidden states relabelled: new state i is old perm[i]."""
        p = np.asarray(perm)
        return GaussianHmm(self.pi[p], self.trans[np.ix_(p, p)], self.means[p],
                           self.stds[p], self.transform_tag, dict(self.metadata))

    def sample(self, length: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        states = np.empty(length, dtype=np.int64)
        states[0] = rng.choice(self.n_states, p=self.pi)
        for t in range(1, length):
            states[t] = rng.choice(self.n_states, p=self.trans[states[t - 1]])
        obs = rng.normal(self.means[states], self.stds[states])
        return obs, states

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "pi": self.pi.tolist(),
            "trans": self.trans.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "transform_tag": self.transform_tag,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHmm":
        hmm = cls(d["pi"], d["trans"], d["means"], d["stds"],
                  d.get("transform_tag", LOG1P), dict(d.get("metadata", {})))
        if hmm.n_states != d["n_states"]:
            raise HmmError("n_states does not match parameter arrays")
        return hmm


def save_hmm(hmm: GaussianHmm, path) -> None:
    # json writes floats with repr(), i.e. shortest round-trip digits
    Path(path).write_text(json.dumps(hmm.to_dict(), indent=1, sort_keys=True) + "\n")


def load_hmm(path) -> GaussianHmm:
    return GaussianHmm.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitReport:
    loglik_trajectory: list
    n_iterations: int
    converged: bool


@dataclass
class ForwardResult:
    """Scaled forward pass.

    ``alpha[t]`` is the filtered state distribution P(s_t | o_1..o_t) and
    ``log_scales[t]`` is ln P(o_t | o_1..o_{t-1}); their sum is the total
    log-likelihood. ``ok`` is False when some step had zero probability.
    """

    loglik: float
    alpha: np.ndarray
    log_scales: np.ndarray
    ok: bool = True


def log_emissions(hmm: GaussianHmm, obs: np.ndarray) -> np.ndarray:
    """(T, K) matrix of ln N(obs_t; mean_k, std_k)."""
    z = (np.asarray(obs, dtype=np.float64)[:, None] - hmm.means[None, :]) / hmm.stds[None, :]
    return -0.5 * z * z - np.log(hmm.stds)[None, :] - _LOG_SQRT_2PI


def _check_obs(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1 or obs.size == 0:
        raise HmmError("observation sequence must be a non-empty vector")
    if not np.all(np.isfinite(obs)):
        raise HmmError("observations must be finite")
    return obs


def log_forward(hmm: GaussianHmm, obs) -> ForwardResult:
    obs = _check_obs(obs)
    logb = log_emissions(hmm, obs)
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    T, K = b.shape
    alpha = np.empty((T, K))
    log_scales = np.empty(T)
    prev = hmm.pi
    for t in range(T):
        a = (prev if t == 0 else prev @ hmm.trans) * b[t]
        c = a.sum()
        if not c > 0.0:
            alpha[t:] = np.nan
            log_scales[t:] = -np.inf
            return ForwardResult(-np.inf, alpha, log_scales, ok=False)
        alpha[t] = a / c
        log_scales[t] = math.log(c) + shift[t]
        prev = alpha[t]
    return ForwardResult(float(log_scales.sum()), alpha, log_scales)


def log_backward(hmm: GaussianHmm, obs, forward: ForwardResult | None = None) -> np.ndarray:
    """Scaled backward variables, normalised with the forward scale factors.

    With ``alpha`` from :func:`log_forward`, ``(alpha[t] * beta[t]).sum() == 1``
    for every t, so the total log-likelihood is recovered at any step as
    ``log((alpha[t] * beta[t]).sum()) + log_scales.sum()``.
    """
    obs = _check_obs(obs)
    if forward is None:
        forward = log_forward(hmm, obs)
    T = obs.size
    beta = np.empty((T, hmm.n_states))
    if not forward.ok:
        beta[:] = np.nan
        return beta
    logb = log_emissions(hmm, obs)
    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        # scale c_{t+1} expressed relative to the same emission shift
        w = np.exp(logb[t + 1] - forward.log_scales[t + 1])
        beta[t] = hmm.trans @ (w * beta[t + 1])
    return beta


def loglik(hmm: GaussianHmm, obs) -> float:
    return log_forward(hmm, obs).loglik


def score_windows(hmm: GaussianHmm, windows: np.ndarray) -> np.ndarray:
    """Log-likelihood of each row of an (N, T) matrix, vectorised over rows."""
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim != 2:
        raise HmmError("windows must be a 2-D array")
    N, T = X.shape
    out = np.zeros(N)
    if N == 0:
        return out
    if T == 0:
        raise HmmError("windows must have at least one column")
    inv = 1.0 / hmm.stds
    lognorm = -np.log(hmm.stds) - _LOG_SQRT_2PI
    prev = None
    for t in range(T):
        z = (X[:, t, None] - hmm.means[None, :]) * inv[None, :]
        logb = -0.5 * z * z + lognorm[None, :]
        shift = logb.max(axis=1)
        b = np.exp(logb - shift[:, None])
        a = (hmm.pi[None, :] if t == 0 else prev @ hmm.trans) * b
        c = a.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out += np.log(c) + shift
            prev = a / c[:, None]
    return out


def viterbi(hmm: GaussianHmm, obs) -> tuple[np.ndarray, float]:
    """Most probable hidden path and its joint log-probability ln P(path, obs)."""
    obs = _check_obs(obs)
    logb = log_emissions(hmm, obs)
    with np.errstate(divide="ignore"):
        logpi = np.log(hmm.pi)
        logA = np.log(hmm.trans)
    T, K = logb.shape
    delta = logpi + logb[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + logA
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + logb[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])


BRUTE_FORCE_LIMIT = 10 ** 6


def path_logprobs(hmm: GaussianHmm, obs) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate every hidden path; returns (paths (K^T, T), ln P(path, obs))."""
    obs = _check_obs(obs)
    K, T = hmm.n_states, obs.size
    if K ** T > BRUTE_FORCE_LIMIT:
        raise HmmError(f"{K}^{T} paths exceeds the enumeration limit {BRUTE_FORCE_LIMIT}")
    paths = np.array(list(itertools.product(range(K), repeat=T)), dtype=np.int64)
    logb = log_emissions(hmm, obs)
    with np.errstate(divide="ignore"):
        logpi = np.log(hmm.pi)
        logA = np.log(hmm.trans)
    lp = logpi[paths[:, 0]] + logb[0, paths[:, 0]]
    for t in range(1, T):
        lp = lp + logA[paths[:, t - 1], paths[:, t]] + logb[t, paths[:, t]]
    return paths, lp


def brute_force_loglik(hmm: GaussianHmm, obs) -> float:
    """ln P(obs) by explicit summation over all K^T hidden paths (test oracle)."""
    _, lp = path_logprobs(hmm, obs)
    m = lp.max()
    if not np.isfinite(m):
        return -math.inf
    return float(m + math.log(math.fsum(np.exp(lp - m))))


def init_hmm(n_states: int, corpus: Sequence[np.ndarray], seed: int = 0,
             transform_tag: str = LOG1P) -> GaussianHmm:
    if n_states < 1:
        raise HmmError("n_states must be positive")
    seqs = [np.asarray(s, dtype=np.float64) for s in corpus]
    if not seqs or sum(s.size for s in seqs) == 0:
        raise HmmError("cannot initialise from an empty corpus")
    pooled = np.concatenate(seqs)
    K = n_states
    means = np.quantile(pooled, (np.arange(K) + 0.5) / K)
    sd = float(pooled.std())
    if sd == 0.0:
        warnings.warn("constant corpus: stds set to the variance floor", RuntimeWarning)
    stds = np.full(K, max(sd, VAR_FLOOR_STD))
    rng = np.random.default_rng(seed)
    trans = (1.0 + 0.01 * rng.uniform(-1.0, 1.0, size=(K, K))) / K
    trans /= trans.sum(axis=1, keepdims=True)
    pi = np.full(K, 1.0 / K)
    return GaussianHmm(pi, trans, means, stds, transform_tag)


@njit(cache=True)
def _estep(obs, offsets, pi, A, means, stds):
    K = pi.shape[0]
    n_seq = offsets.shape[0] - 1
    max_len = 0
    for i in range(n_seq):
        max_len = max(max_len, offsets[i + 1] - offsets[i])
    alpha = np.empty((max_len, K))
    beta = np.empty((max_len, K))
    b = np.empty((max_len, K))
    scale = np.empty(max_len)
    g0 = np.zeros(K)
    xi = np.zeros((K, K))
    gsum = np.zeros(K)
    gx = np.zeros(K)
    gxx = np.zeros(K)
    total = 0.0
    lognorm = np.empty(K)
    for k in range(K):
        lognorm[k] = -np.log(stds[k]) - 0.9189385332046727
    for i in range(n_seq):
        s0 = offsets[i]
        T = offsets[i + 1] - s0
        # emissions relative to their per-step maximum
        for t in range(T):
            x = obs[s0 + t]
            m = -np.inf
            for k in range(K):
                z = (x - means[k]) / stds[k]
                v = -0.5 * z * z + lognorm[k]
                b[t, k] = v
                if v > m:
                    m = v
            for k in range(K):
                b[t, k] = np.exp(b[t, k] - m)
            total += m
        c = 0.0
        for k in range(K):
            alpha[0, k] = pi[k] * b[0, k]
            c += alpha[0, k]
        if not c > 0.0:
            return -np.inf, g0, xi, gsum, gx, gxx
        scale[0] = c
        for k in range(K):
            alpha[0, k] /= c
        total += np.log(c)
        for t in range(1, T):
            c = 0.0
            for j in range(K):
                acc = 0.0
                for k in range(K):
                    acc += alpha[t - 1, k] * A[k, j]
                alpha[t, j] = acc * b[t, j]
                c += alpha[t, j]
            if not c > 0.0:
                return -np.inf, g0, xi, gsum, gx, gxx
            scale[t] = c
            for j in range(K):
                alpha[t, j] /= c
            total += np.log(c)
        for k in range(K):
            beta[T - 1, k] = 1.0
        for t in range(T - 2, -1, -1):
            for k in range(K):
                acc = 0.0
                for j in range(K):
                    acc += A[k, j] * b[t + 1, j] * beta[t + 1, j]
                beta[t, k] = acc / scale[t + 1]
        for t in range(T):
            x = obs[s0 + t]
            norm = 0.0
            for k in range(K):
                norm += alpha[t, k] * beta[t, k]
            for k in range(K):
                g = alpha[t, k] * beta[t, k] / norm
                if t == 0:
                    g0[k] += g
                gsum[k] += g
                gx[k] += g * x
                gxx[k] += g * x * x
        for t in range(T - 1):
            for k in range(K):
                ak = alpha[t, k] / scale[t + 1]
                for j in range(K):
                    xi[k, j] += ak * A[k, j] * b[t + 1, j] * beta[t + 1, j]
    return total, g0, xi, gsum, gx, gxx


def _pack(corpus: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    seqs = [np.asarray(s, dtype=np.float64) for s in corpus]
    lengths = np.array([s.size for s in seqs], dtype=np.int64)
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    obs = np.concatenate(seqs) if seqs else np.empty(0)
    return obs, offsets


def corpus_loglik(hmm: GaussianHmm, corpus: Sequence[np.ndarray]) -> float:
    obs, offsets = _pack(corpus)
    return float(_estep(obs, offsets, hmm.pi, hmm.trans, hmm.means, hmm.stds)[0])


def _mstep(prev: GaussianHmm, g0, xi, gsum, gx, gxx) -> GaussianHmm:
    K = prev.n_states
    pi = g0 / g0.sum()
    rows = xi.sum(axis=1)
    trans = prev.trans.copy()
    live = rows > 0
    trans[live] = xi[live] / rows[live, None]
    means = prev.means.copy()
    stds = prev.stds.copy()
    # a state with no responsibility keeps its previous emission
    occ = gsum > 1e-300
    means[occ] = gx[occ] / gsum[occ]
    var = np.zeros(K)
    var[occ] = np.maximum(gxx[occ] / gsum[occ] - means[occ] ** 2, 0.0)
    stds[occ] = np.maximum(np.sqrt(var[occ]), VAR_FLOOR_STD)
    return GaussianHmm(pi, trans, means, stds, prev.transform_tag, dict(prev.metadata))


def baum_welch(hmm0: GaussianHmm, corpus: Sequence[np.ndarray], max_iter: int = DEFAULT_MAX_ITER,
               tol: float = DEFAULT_TOL) -> tuple[GaussianHmm, FitReport]:
    """Multi-sequence EM.

    One iteration is an M-step followed by the E-step of the updated
    model; it stops when the relative log-likelihood gain of an iteration
    drops below ``tol``. The trajectory holds the log-likelihood of the
    initial model followed by one entry per iteration.
    """
    if len(corpus) == 0:
        raise HmmError("empty corpus")
    obs, offsets = _pack(corpus)
    if not np.all(np.isfinite(obs)):
        raise HmmError("corpus contains non-finite observations")
    hmm = hmm0
    ll, *stats = _estep(obs, offsets, hmm.pi, hmm.trans, hmm.means, hmm.stds)
    if not np.isfinite(ll):
        raise HmmError("initial model assigns zero likelihood to the corpus")
    trajectory = [float(ll)]
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        new = _mstep(hmm, *stats)
        try:
            new.check(atol=1e-6)
        except HmmError as exc:
            raise HmmError(f"EM update {n_iter + 1} failed: {exc}; "
                           f"state occupancy={stats[2].tolist()}") from exc
        new_ll, *new_stats = _estep(obs, offsets, new.pi, new.trans, new.means, new.stds)
        if not np.isfinite(new_ll):
            raise HmmError(f"EM update {n_iter + 1} produced log-likelihood {new_ll}")
        n_iter += 1
        trajectory.append(float(new_ll))
        gain = (new_ll - ll) / abs(ll) if ll != 0 else new_ll - ll
        hmm, ll, stats = new, new_ll, new_stats
        if gain < tol:
            converged = True
            break
    return hmm, FitReport(trajectory, n_iter, converged)


def fit_hmm(corpus: Sequence[np.ndarray], n_states: int, seed: int = 0, restarts: int = 1,
            max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> tuple[GaussianHmm, FitReport]:
    """Initialise and train; with restarts > 1 keep the best final log-likelihood."""
    best = None
    for r in range(max(1, restarts)):
        hmm0 = init_hmm(n_states, corpus, seed=seed + 7919 * r)
        if r > 0:
            # restarts jitter the quantile means so EM starts from distinct points
            pooled_sd = float(hmm0.stds[0])
            jitter = np.random.default_rng([seed, r]).normal(0.0, 0.25 * pooled_sd, n_states)
            hmm0 = GaussianHmm(hmm0.pi, hmm0.trans, np.sort(hmm0.means + jitter), hmm0.stds)
        hmm, rep = baum_welch(hmm0, corpus, max_iter=max_iter, tol=tol)
        if best is None or rep.loglik_trajectory[-1] > best[1].loglik_trajectory[-1]:
            best = (hmm, rep)
    return best
