"""Random model generators shared by the unit and acceptance tests."""

import numpy as np

from qstat.gaussmarkov import GaussMarkovModel
from qstat.hmm import HmmModel


def random_hmm(rng, n_max=4, m_max=3):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    initial = rng.dirichlet(np.ones(n))
    kernel = rng.dirichlet(np.ones(m * n), size=n).T.reshape(m, n, n)
    return HmmModel(initial, kernel)


def random_joint_noise(rng, D, d, cross=True):
    """[[Q, S], [S^T, R]] as G G^T + jitter; R strictly positive definite."""
    G = rng.standard_normal((D + d, D + d))
    W = G @ G.T / (D + d) + 0.1 * np.eye(D + d)
    if not cross:
        W[:D, D:] = 0.0
        W[D:, :D] = 0.0
    return W[:D, :D], W[D:, D:], W[:D, D:]


def random_hgmm(rng, d_max=5, obs_max=2, with_input=False):
    D = int(rng.integers(1, d_max + 1))
    d = int(rng.integers(1, obs_max + 1))
    A = rng.standard_normal((D, D))
    A *= rng.uniform(0.3, 1.1) / max(1e-12, np.abs(np.linalg.eigvals(A)).max())
    C = rng.standard_normal((d, D))
    Q, R, S = random_joint_noise(rng, D, d)
    x0 = rng.standard_normal(D)
    L = rng.standard_normal((D, D))
    P0 = L @ L.T / D + 0.05 * np.eye(D)
    B = u = None
    if with_input:
        B = rng.standard_normal((D, 1))
        u = np.array([rng.standard_normal()])
    return GaussMarkovModel(A, C, Q, R, x0, P0, S=S, B=B, u=u)
