"""Independent reference implementations used as test oracles.

These are deliberately naive (covariance + eigh, explicit loops, cdist,
Monte Carlo) and share no code with the package.
"""
import numpy as np
from scipy.spatial.distance import cdist


def cov_eig(x):
    c = np.atleast_2d(np.cov(x.T))
    w, v = np.linalg.eigh(c)
    order = np.argsort(w)[::-1]
    w, v = np.clip(w[order], 0, None), v[:, order]
    pivot = np.argmax(np.abs(v), axis=0)
    return w, v * np.sign(v[pivot, np.arange(v.shape[1])])


def compactness(ens, k_max):
    w, _ = cov_eig(ens.reshape(len(ens), -1))
    return np.cumsum(w[:k_max])


def generalization(ens, k_max):
    x = ens.reshape(len(ens), -1)
    out = np.zeros(k_max)
    for i in range(len(x)):
        rest = np.delete(x, i, axis=0)
        mu = rest.mean(axis=0)
        _, v = cov_eig(rest)
        for k in range(1, k_max + 1):
            u = v[:, :k]
            rec = mu + u @ (u.T @ (x[i] - mu))
            out[k - 1] += np.sum((rec - x[i]) ** 2) / len(x)
    return out


def specificity(ens, k_max, j, seed):
    x = ens.reshape(len(ens), -1)
    mu = x.mean(axis=0)
    w, v = cov_eig(x)
    rng = np.random.default_rng(seed)
    out = np.zeros(k_max)
    for k in range(1, k_max + 1):
        z = rng.standard_normal((j, k))
        samples = mu + (z * np.sqrt(w[:k])) @ v[:, :k].T
        out[k - 1] = np.mean(cdist(samples, x, "sqeuclidean").min(axis=1))
    return out


def sign_permutation_p(d, n_perm, rng):
    """Monte Carlo two-sided p of the paired t statistic under random sign flips."""
    d = np.asarray(d, dtype=float)

    def t_of(x):
        return x.mean(axis=-1) / (x.std(axis=-1, ddof=1) / np.sqrt(x.shape[-1]))

    t_obs = abs(t_of(d))
    flipped = rng.choice([-1.0, 1.0], size=(n_perm, d.size)) * d
    return float(np.mean(np.abs(t_of(flipped)) >= t_obs - 1e-12))


def central_difference(f, x, h):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
