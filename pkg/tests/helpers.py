"""Shared test utilities: small models, oracles, and surrogate fits."""

from __future__ import annotations

import numpy as np

from fungible import ModelSpec, f_ml, make_model


def saturated_1var():
    """One observed variable with a free variance."""
    return make_model(["z"], [], [], [{"row": "z", "col": "z", "param": "v"}])


def diag_model(p):
    """p observed variables, free variances, no paths."""
    names = [f"z{i}" for i in range(p)]
    symmetric = [{"row": nm, "col": nm, "param": f"v{i}"} for i, nm in enumerate(names)]
    return make_model(names, [], [], symmetric)


def two_var_path(fixed_exogenous=True):
    """x -> y with free coefficient; exogenous variance fixed at 1 (or free)."""
    symmetric = [{"row": "y", "col": "y", "param": "u"}]
    if fixed_exogenous:
        symmetric.insert(0, {"row": "x", "col": "x", "value": 1.0})
    else:
        symmetric.insert(0, {"row": "x", "col": "x", "param": "v"})
    return make_model(["x", "y"], [], [{"row": "y", "col": "x", "param": "b"}], symmetric)


def random_model(rng):
    """A random small recursive model plus a random theta and a random
    positive definite covariance of matching order."""
    p = int(rng.integers(2, 5))
    with_latent = bool(rng.integers(0, 2))
    obs = [f"y{i}" for i in range(p)]
    lat = ["f0"] if with_latent else []
    budget = p * (p + 1) // 2 - p  # free slots beyond the p variances
    directed = []
    k = 0
    if with_latent:
        for i in range(p):
            if k < budget and (i == 0 or rng.random() < 0.7):
                directed.append({"row": obs[i], "col": "f0", "param": f"b{k}"})
                k += 1
    for j in range(1, p):
        for i in range(j):
            if k < budget and rng.random() < 0.3:
                directed.append({"row": obs[j], "col": obs[i], "param": f"b{k}"})
                k += 1
    symmetric = [{"row": nm, "col": nm, "param": f"v{i}"} for i, nm in enumerate(obs)]
    if with_latent:
        symmetric.append({"row": "f0", "col": "f0", "value": 1.0})
    model = make_model(obs, lat, directed, symmetric)

    theta = np.empty(model.q)
    for i in range(model.q):
        if model.variance_param_mask[i]:
            theta[i] = rng.uniform(0.4, 1.6)
        else:
            theta[i] = rng.uniform(-0.7, 0.7)
    a = rng.standard_normal((p, p + 3))
    s = a @ a.T / (p + 3) + 0.5 * np.eye(p)
    return model, theta, s


def permute_observed(model: ModelSpec, perm):
    """The same model with its observed variables reordered by ``perm``."""
    perm = list(perm)
    full = np.array(perm + list(range(model.n_observed, model.m)))
    ix = np.ix_(full, full)
    return ModelSpec(
        observed=tuple(model.observed[i] for i in perm),
        latent=model.latent,
        directed_fixed=model.directed_fixed[ix],
        directed_param=model.directed_param[ix],
        symmetric_fixed=model.symmetric_fixed[ix],
        symmetric_param=model.symmetric_param[ix],
        theta_names=model.theta_names,
        start=model.start,
    )


def finite_diff_gradient(model, theta, s, rel_step=1e-6):
    """Central finite differences of f_ml; the oracle for the analytic
    gradient."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(model.q)
    for i in range(model.q):
        h = rel_step * max(1.0, abs(theta[i]))
        step = np.zeros(model.q)
        step[i] = h
        grad[i] = (f_ml(model, theta + step, s) - f_ml(model, theta - step, s)) / (2 * h)
    return grad


class QuadraticSurrogate:
    """Duck-typed fit whose objective is exactly quadratic around theta_hat.

    Exposes the attributes the contour operations read from a FitResult.
    """

    def __init__(self, hessian, theta_hat=None, f_hat=0.0, n=None):
        self.hessian_at_opt = np.asarray(hessian, dtype=float)
        q = self.hessian_at_opt.shape[0]
        self.theta_hat = np.zeros(q) if theta_hat is None else np.asarray(theta_hat, float)
        self.f_hat = float(f_hat)
        self.n = n

    def objective(self, theta):
        d = np.asarray(theta, dtype=float) - self.theta_hat
        return self.f_hat + 0.5 * float(d @ self.hessian_at_opt @ d)
