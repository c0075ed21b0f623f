"""Independent reference computations used as test oracles (moment form)."""
import numpy as np


def moments(p):
    cov = np.linalg.inv(p.info_matrix)
    return cov @ p.info_vector, cov


def kl_moments(m0, c0, m1, c1):
    k = len(m0)
    inv1 = np.linalg.inv(c1)
    d = m1 - m0
    return 0.5 * (np.trace(inv1 @ c0) + d @ inv1 @ d - k
                  + np.log(np.linalg.det(c1)) - np.log(np.linalg.det(c0)))


def random_spd(rng, k, lo=0.3, hi=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    return q @ np.diag(rng.uniform(lo, hi, size=k)) @ q.T
