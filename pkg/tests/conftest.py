import numpy as np

from stochbolza.convex import Box
from stochbolza.lcontrol import LQProblem


def random_psd(rng, d, lo=0.0, hi=5.0):
    w = rng.uniform(lo, hi, size=d)
    V = np.linalg.qr(rng.normal(size=(d, d)))[0]
    return V @ np.diag(w) @ V.T


def zero_mean_samples(rng, n, k=2):
    """k noise samples in R^n with exactly zero weighted mean."""
    w = rng.uniform(0.3, 0.7)
    weights = np.array([w, 1.0 - w])
    weights[-1] = 1.0 - weights[:-1].sum()
    v = rng.uniform(0.3, 1.5, size=n) * rng.choice([-1.0, 1.0], size=n)
    samples = [(v, float(weights[0])),
               (-v * weights[0] / weights[1], float(weights[1]))]
    return samples


def random_lq(rng, max_dim=2, max_horizon=3, with_gamma=False) -> LQProblem:
    """Qualified random LQ instance: R positive definite, interior xi."""
    n = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, max_dim + 1))
    horizon = int(rng.integers(1, max_horizon + 1))
    A = rng.uniform(-1.0, 1.0, size=(n, n)) + np.eye(n) * 0.5
    B = rng.uniform(-1.0, 1.0, size=(n, m))
    if np.linalg.norm(B) < 0.3:
        B = B + 0.5 * np.sign(B + 1e-9)
    P = random_psd(rng, n, 0.0, 3.0)
    R = random_psd(rng, m, 0.1, 10.0) + 0.1 * np.eye(m)
    Q = random_psd(rng, n, 0.0, 3.0)
    noise = {t: zero_mean_samples(rng, n) for t in range(horizon)}
    xi = rng.uniform(-2.0, 2.0, size=n)
    gamma = ((0.0, 1.0),)
    if with_gamma and rng.integers(0, 2):
        gamma = ((1.0, 0.5), (-1.0, 0.5))
    return LQProblem(n, m, A, B, (0, horizon), P, R, Q, noise, xi,
                     gamma=gamma, initial_box=Box(np.full(n, -10.0), np.full(n, 10.0)))
