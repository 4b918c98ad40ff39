"""Reference values frozen in tests/test_oracles.cpp.

Each marginal log-likelihood is computed by adaptive quadrature (scipy.quad)
over the latent effect, independent of the C++ code. Run with python3.
"""
import numpy as np
from scipy import integrate, special, stats

np.seterr(over="ignore")

# Poisson random intercept: 3 clusters.
pois = {
    1: [(0, -0.5), (2, 0.3), (1, 1.1)],
    2: [(3, 0.0), (4, 0.7)],
    3: [(0, -1.2), (1, 0.4), (0, -0.3), (2, 0.9)],
}
bern = {
    1: [(1, 0.2), (0, -0.8), (1, 1.5)],
    2: [(0, -0.1), (0, 0.6)],
    3: [(1, 0.3), (1, -0.4), (0, 1.0), (1, 0.1)],
}
# Weibull frailty: (time, event, x)
weib = {
    1: [(1.3, 1, 0.5), (0.4, 0, -0.2)],
    2: [(2.2, 1, 1.0), (0.9, 1, 0.0), (3.1, 0, -1.0)],
    3: [(0.7, 1, 0.3)],
}


def marginal(clusters, cond, dens):
    total = 0.0
    for rows in clusters.values():
        f = lambda b: np.exp(sum(cond(r, b) for r in rows)) * dens(b)
        v, _ = integrate.quad(f, -np.inf, np.inf, epsabs=0, epsrel=1e-13, limit=500)
        total += np.log(v)
    return total


def pois_cond(beta, cons):
    def c(r, b):
        y, x = r
        eta = cons + beta * x + b
        return y * eta - np.exp(eta) - special.gammaln(y + 1)
    return c


def bern_cond(beta, cons):
    def c(r, b):
        y, x = r
        eta = cons + beta * x + b
        return y * eta - np.logaddexp(0, eta)
    return c


def weib_cond(beta, cons, lngamma):
    g = np.exp(lngamma)
    def c(r, b):
        t, d, x = r
        eta = cons + beta * x + b
        return d * (eta + np.log(g) + (g - 1) * np.log(t)) - np.exp(eta) * t ** g
    return c


sd = np.exp(-0.4)
normal = lambda b: stats.norm.pdf(b, scale=sd)
t4 = lambda b: stats.t.pdf(b / sd, df=4) / sd

print("poisson normal", repr(marginal(pois, pois_cond(0.6, 0.2), normal)))
print("poisson t4", repr(marginal(pois, pois_cond(0.6, 0.2), t4)))
print("bernoulli normal", repr(marginal(bern, bern_cond(-0.7, 0.3), normal)))
print("weibull normal", repr(marginal(weib, weib_cond(0.4, -0.5, 0.2), normal)))
