"""Covariance-structure models in RAM form.

A model is a pattern over two m x m matrices (m = #observed + #latent):
``A`` holds directed path coefficients ("structural effects") and ``S`` holds
variances and covariances (its free observed-diagonal entries are the
"unique variances").  Each entry is either a fixed value or one of ``q`` free
parameters, and the implied covariance of the observed variables is

    Sigma(theta) = F (I - A)^-1 S (I - A)^-T F^T

where ``F`` is the 0/1 filter selecting observed rows.  Variables are ordered
observed first, latent last, so ``F = [I_p  0]`` throughout.

The module also provides the four canonical population conditions used by the
simulation study (``Sigma1`` .. ``Sigma4``, a 2 x 2 grid of unique-variance
and structural-effect magnitudes) and controlled injection of population
misfit at a target RMSEA via an omitted residual covariance.

Parameter vectors are plain 1-d numpy arrays of length ``q`` in
``theta_names`` order; they are validated at every entry point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from ._solve import bracketed_root
from .errors import (
    NoConvergence,
    NotPositiveDefinite,
    SingularStructure,
    TargetUnreachable,
)

FIXED = -1

# Canonical magnitudes for the builtin conditions.  "Large"/"small" unique
# variances pin the loadings through the standardization lambda^2 + u = 1;
# the structural-effect level sets the two outcome paths gamma1, gamma2.
UNIQUE_VARIANCE_LEVELS = {"large_uv": 0.64, "small_uv": 0.36}
STRUCTURAL_EFFECT_LEVELS = {"small_se": 0.2, "large_se": 0.5}
# strong enough that the two-indicator factor stays well identified in
# samples of N = 200 (weaker values produce frequent Heywood cases)
FACTOR_COVARIANCE = 0.5

CONDITION_LABELS = {
    ("large_uv", "small_se"): "Sigma1",
    ("small_uv", "small_se"): "Sigma2",
    ("large_uv", "large_se"): "Sigma3",
    ("small_uv", "large_se"): "Sigma4",
}
_VARIANT_OF_LABEL = {v: k for k, v in CONDITION_LABELS.items()}


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """RAM pattern of a covariance-structure model.

    ``directed_fixed``/``directed_param`` describe A, ``symmetric_fixed``/
    ``symmetric_param`` describe S.  ``*_param`` entries hold a free-parameter
    index (into ``theta_names``) or ``FIXED``; the matching ``*_fixed`` entry
    then holds the fixed value.  ``start`` is an optional explicit start
    vector; when ``None`` the fitting default is used (free variances at half
    the observed diagonal, free effects at 0.1, free covariances at 0).
    """

    observed: tuple[str, ...]
    latent: tuple[str, ...]
    directed_fixed: np.ndarray
    directed_param: np.ndarray
    symmetric_fixed: np.ndarray
    symmetric_param: np.ndarray
    theta_names: tuple[str, ...]
    start: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(self.observed))
        object.__setattr__(self, "latent", tuple(self.latent))
        object.__setattr__(self, "theta_names", tuple(self.theta_names))
        object.__setattr__(
            self, "directed_fixed", _frozen_array(self.directed_fixed, float)
        )
        object.__setattr__(
            self, "directed_param", _frozen_array(self.directed_param, np.int64)
        )
        object.__setattr__(
            self, "symmetric_fixed", _frozen_array(self.symmetric_fixed, float)
        )
        object.__setattr__(
            self, "symmetric_param", _frozen_array(self.symmetric_param, np.int64)
        )
        if self.start is not None:
            object.__setattr__(self, "start", _frozen_array(self.start, float))
        self._validate()

    def _validate(self):
        m = self.m
        names = self.observed + self.latent
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        for label, arr in (
            ("directed_fixed", self.directed_fixed),
            ("directed_param", self.directed_param),
            ("symmetric_fixed", self.symmetric_fixed),
            ("symmetric_param", self.symmetric_param),
        ):
            if arr.shape != (m, m):
                raise ValueError(f"{label} must have shape ({m}, {m})")
        if not np.array_equal(self.symmetric_fixed, self.symmetric_fixed.T):
            raise ValueError("symmetric pattern values are not symmetric")
        if not np.array_equal(self.symmetric_param, self.symmetric_param.T):
            raise ValueError("symmetric pattern parameter indices are not symmetric")
        q = self.q
        if q < 1:
            raise ValueError("model has no free parameters")
        used = set(self.directed_param[self.directed_param >= 0].tolist())
        used |= set(self.symmetric_param[self.symmetric_param >= 0].tolist())
        if used != set(range(q)):
            raise ValueError(
                "free-parameter indices must cover 0..q-1 exactly "
                f"(q={q}, used={sorted(used)})"
            )
        if self.df < 0:
            raise ValueError(f"negative degrees of freedom: df={self.df}")
        if self.start is not None:
            if self.start.shape != (q,):
                raise ValueError(f"start vector must have length {q}")
            if not np.all(np.isfinite(self.start)):
                raise ValueError("start vector must be finite")
        theta0 = self.start if self.start is not None else self.default_start()
        A, _ = self.build_matrices(theta0)
        im_a = np.eye(m) - A
        if abs(np.linalg.det(im_a)) < 1e-12:
            raise ValueError("(I - A) is singular at the model's default start vector")

    @property
    def n_observed(self) -> int:
        return len(self.observed)

    @property
    def n_latent(self) -> int:
        return len(self.latent)

    @property
    def m(self) -> int:
        return len(self.observed) + len(self.latent)

    @property
    def q(self) -> int:
        return len(self.theta_names)

    @property
    def df(self) -> int:
        p = self.n_observed
        return p * (p + 1) // 2 - self.q

    @cached_property
    def filter_matrix(self) -> np.ndarray:
        p = self.n_observed
        f = np.hstack([np.eye(p), np.zeros((p, self.n_latent))])
        f.setflags(write=False)
        return f

    @cached_property
    def _a_entries(self) -> tuple[tuple[int, int, int], ...]:
        rows, cols = np.nonzero(self.directed_param >= 0)
        return tuple(
            (int(self.directed_param[i, j]), int(i), int(j))
            for i, j in zip(rows, cols)
        )

    @cached_property
    def _s_entries(self) -> tuple[tuple[int, int, int], ...]:
        # upper triangle including the diagonal; each free pair once
        rows, cols = np.nonzero(self.symmetric_param >= 0)
        return tuple(
            (int(self.symmetric_param[i, j]), int(i), int(j))
            for i, j in zip(rows, cols)
            if i <= j
        )

    @cached_property
    def variance_param_mask(self) -> np.ndarray:
        """Boolean theta mask of parameters appearing on the S diagonal."""
        mask = np.zeros(self.q, dtype=bool)
        for k, i, j in self._s_entries:
            if i == j:
                mask[k] = True
        mask.setflags(write=False)
        return mask

    def build_matrices(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Assemble (A, S) at a parameter vector."""
        theta = as_theta(self, theta)
        a = self.directed_fixed.copy()
        free = self.directed_param >= 0
        a[free] = theta[self.directed_param[free]]
        s = self.symmetric_fixed.copy()
        free = self.symmetric_param >= 0
        s[free] = theta[self.symmetric_param[free]]
        return a, s

    def default_start(self, s=None) -> np.ndarray:
        """Fitting start vector: free variances at half the matching observed
        diagonal (0.5 when no covariance is supplied or the variance is
        latent), free effects at 0.1, free covariances at 0."""
        start = np.zeros(self.q)
        for k, _i, _j in self._a_entries:
            start[k] = 0.1
        p = self.n_observed
        for k, i, j in self._s_entries:
            if i != j:
                start[k] = 0.0
            elif s is not None and i < p:
                start[k] = 0.5 * float(np.asarray(s)[i, i])
            else:
                start[k] = 0.5
        return start


def as_theta(model: ModelSpec, theta) -> np.ndarray:
    """Validate and return theta as a length-q float array."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.q,):
        raise ValueError(
            f"parameter vector must have length {model.q}, got shape {theta.shape}"
        )
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector must be finite")
    return theta


def _implied(model: ModelSpec, theta):
    """Internal: (A, S, G, GSG', Sigma) at theta, with G = (I - A)^-1."""
    theta = as_theta(model, theta)
    a, s = model.build_matrices(theta)
    m = model.m
    im_a = np.eye(m) - a
    try:
        g = np.linalg.solve(im_a, np.eye(m))
    except np.linalg.LinAlgError:
        raise SingularStructure("(I - A) is singular") from None
    if not np.all(np.isfinite(g)):
        raise SingularStructure("(I - A) solve produced non-finite entries")
    resid = np.abs(im_a @ g - np.eye(m)).max()
    if resid > 1e-8 * max(1.0, np.abs(g).max()):
        raise SingularStructure(
            f"(I - A) is numerically singular (solve residual {resid:.2e})"
        )
    c = g @ s @ g.T
    p = model.n_observed
    sigma = c[:p, :p]
    sigma = 0.5 * (sigma + sigma.T)
    return a, s, g, c, sigma


def sigma_of_theta(model: ModelSpec, theta) -> np.ndarray:
    """Model-implied covariance of the observed variables at theta.

    Returns an exactly symmetric p x p matrix; positive definite whenever
    S(theta) is positive definite and the model is recursive.  Raises
    :class:`SingularStructure` when (I - A) is numerically singular.
    """
    return _implied(model, theta)[4]


# ---------------------------------------------------------------------------
# Model construction and JSON interchange


def _resolve(name_to_index, entry, key):
    value = entry[key]
    if isinstance(value, (int, np.integer)):
        idx = int(value)
        if not 0 <= idx < len(name_to_index):
            raise ValueError(f"variable index {idx} out of range")
        return idx
    try:
        return name_to_index[value]
    except KeyError:
        raise ValueError(f"unknown variable {value!r}") from None


def make_model(observed, latent, directed, symmetric, start_values=None) -> ModelSpec:
    """Build a :class:`ModelSpec` from entry lists.

    ``directed`` and ``symmetric`` hold dicts with keys ``row``, ``col`` and
    either ``value`` (fixed) or ``param`` (free, a parameter name).  Rows and
    columns are variable names (or integer indices into observed+latent).
    Free-parameter indices are assigned in order of first appearance, directed
    entries before symmetric ones.  ``start_values`` optionally lists
    ``{"param": name, "value": v}`` overrides for the default start.
    """
    observed = tuple(str(v) for v in observed)
    latent = tuple(str(v) for v in latent)
    names = observed + latent
    if len(set(names)) != len(names):
        raise ValueError("variable names must be unique")
    index = {name: i for i, name in enumerate(names)}
    m = len(names)

    d_fixed = np.zeros((m, m))
    d_param = np.full((m, m), FIXED, dtype=np.int64)
    s_fixed = np.zeros((m, m))
    s_param = np.full((m, m), FIXED, dtype=np.int64)
    param_index: dict[str, int] = {}

    def param_id(name):
        name = str(name)
        if name not in param_index:
            param_index[name] = len(param_index)
        return param_index[name]

    for entry in directed:
        i = _resolve(index, entry, "row")
        j = _resolve(index, entry, "col")
        if d_param[i, j] != FIXED or d_fixed[i, j] != 0.0:
            raise ValueError(f"duplicate directed entry at ({i}, {j})")
        if "param" in entry:
            d_param[i, j] = param_id(entry["param"])
        elif "value" in entry:
            d_fixed[i, j] = float(entry["value"])
        else:
            raise ValueError("directed entry needs 'param' or 'value'")

    for entry in symmetric:
        i = _resolve(index, entry, "row")
        j = _resolve(index, entry, "col")
        if "param" in entry:
            k = param_id(entry["param"])
            for r, c in ((i, j), (j, i)):
                if s_param[r, c] not in (FIXED, k):
                    raise ValueError(f"conflicting symmetric entry at ({r}, {c})")
                s_param[r, c] = k
        elif "value" in entry:
            v = float(entry["value"])
            for r, c in ((i, j), (j, i)):
                if s_param[r, c] != FIXED or (s_fixed[r, c] not in (0.0, v)):
                    raise ValueError(f"conflicting symmetric entry at ({r}, {c})")
                s_fixed[r, c] = v
        else:
            raise ValueError("symmetric entry needs 'param' or 'value'")

    theta_names = tuple(sorted(param_index, key=param_index.get))
    start = None
    if start_values:
        probe = ModelSpec(
            observed, latent, d_fixed, d_param, s_fixed, s_param, theta_names
        )
        start = probe.default_start()
        for item in start_values:
            name = str(item["param"])
            if name not in param_index:
                raise ValueError(f"start value for unknown parameter {name!r}")
            start[param_index[name]] = float(item["value"])
    return ModelSpec(
        observed, latent, d_fixed, d_param, s_fixed, s_param, theta_names, start
    )


def load_model(source) -> ModelSpec:
    """Load a model from a dict, a JSON string, or a path to a JSON file.

    The document schema is described in docs/model-format.md.
    """
    if isinstance(source, dict):
        doc = source
    else:
        path = Path(source)
        doc = json.loads(path.read_text())
    return make_model(
        doc["observed"],
        doc["latent"],
        doc.get("directed", []),
        doc.get("symmetric", []),
        doc.get("start_values"),
    )


def model_to_dict(model: ModelSpec) -> dict:
    """Inverse of :func:`load_model` (zero fixed entries are omitted)."""
    names = model.observed + model.latent
    directed = []
    for k, i, j in model._a_entries:
        directed.append({"row": names[i], "col": names[j], "param": model.theta_names[k]})
    for i, j in zip(*np.nonzero(model.directed_fixed)):
        directed.append(
            {"row": names[i], "col": names[j], "value": float(model.directed_fixed[i, j])}
        )
    symmetric = []
    for k, i, j in model._s_entries:
        symmetric.append({"row": names[i], "col": names[j], "param": model.theta_names[k]})
    for i, j in zip(*np.nonzero(np.triu(model.symmetric_fixed))):
        symmetric.append(
            {"row": names[i], "col": names[j], "value": float(model.symmetric_fixed[i, j])}
        )
    doc = {
        "observed": list(model.observed),
        "latent": list(model.latent),
        "directed": directed,
        "symmetric": symmetric,
    }
    if model.start is not None:
        doc["start_values"] = [
            {"param": name, "value": float(v)}
            for name, v in zip(model.theta_names, model.start)
        ]
    return doc


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Population conditions


@dataclass(frozen=True)
class PopulationCondition:
    """A population covariance plus the analysis model fitted to it.

    ``epsilon_pop`` is the population misfit on the RMSEA scale;
    ``misfit_pair`` designates the observed pair whose omitted residual
    covariance absorbs misfit perturbations, and ``perturbation`` records the
    magnitude already applied to ``sigma_pop``.
    """

    label: str
    model: ModelSpec
    theta_star: np.ndarray
    sigma_pop: np.ndarray
    epsilon_pop: float = 0.0
    misfit_pair: tuple[int, int] | None = None
    perturbation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta_star", _frozen_array(self.theta_star, float))
        sigma = np.asarray(self.sigma_pop, dtype=float)
        sigma = 0.5 * (sigma + sigma.T)
        object.__setattr__(self, "sigma_pop", _frozen_array(sigma, float))
        as_theta(self.model, self.theta_star)
        p = self.model.n_observed
        if self.sigma_pop.shape != (p, p):
            raise ValueError(f"sigma_pop must be {p} x {p}")
        try:
            np.linalg.cholesky(self.sigma_pop)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("sigma_pop") from None
        if self.epsilon_pop < 0:
            raise ValueError("epsilon_pop must be nonnegative")
        if self.misfit_pair is not None:
            i, j = self.misfit_pair
            if not (0 <= i < p and 0 <= j < p and i != j):
                raise ValueError("misfit_pair must be two distinct observed indices")
            object.__setattr__(self, "misfit_pair", (int(i), int(j)))


def canonical_model() -> ModelSpec:
    """The desk-scale analysis model behind the builtin conditions.

    Six standardized observed variables and two correlated factors: f1 is
    measured by x1-x3, f2 by x4-x5, and x6 is an observed outcome regressed
    on both factors.  The two outcome paths gamma1 and gamma2 are the primary
    structural effects (the default focal pair downstream).
    """
    observed = ["x1", "x2", "x3", "x4", "x5", "x6"]
    latent = ["f1", "f2"]
    directed = [
        {"row": "x1", "col": "f1", "param": "lam1"},
        {"row": "x2", "col": "f1", "param": "lam2"},
        {"row": "x3", "col": "f1", "param": "lam3"},
        {"row": "x4", "col": "f2", "param": "lam4"},
        {"row": "x5", "col": "f2", "param": "lam5"},
        {"row": "x6", "col": "f1", "param": "gamma1"},
        {"row": "x6", "col": "f2", "param": "gamma2"},
    ]
    symmetric = [{"row": v, "col": v, "param": f"u{k}"} for k, v in enumerate(observed, 1)]
    symmetric += [
        {"row": "f1", "col": "f1", "value": 1.0},
        {"row": "f2", "col": "f2", "value": 1.0},
        {"row": "f1", "col": "f2", "param": "phi"},
    ]
    return make_model(observed, latent, directed, symmetric)


# observed pair whose residual covariance is fixed to zero in the analysis
# model and carries the misfit perturbation (x1 with x4, across factors)
MISFIT_PAIR = (0, 3)


def builtin_conditions(uv: str, se: str) -> PopulationCondition:
    """Canonical population condition for a (unique-variance, structural-
    effect) variant; e.g. ``("large_uv", "small_se")`` is ``Sigma1``.

    The construction is standardized: every observed variance is exactly 1,
    loadings are sqrt(1 - u), and the outcome's unique variance absorbs the
    variance explained by the two structural effects.  ``epsilon_pop`` is 0
    and ``sigma_pop`` equals ``sigma_of_theta(model, theta_star)``.
    """
    if uv not in UNIQUE_VARIANCE_LEVELS:
        raise ValueError(f"unknown unique-variance level {uv!r}")
    if se not in STRUCTURAL_EFFECT_LEVELS:
        raise ValueError(f"unknown structural-effect level {se!r}")
    u = UNIQUE_VARIANCE_LEVELS[uv]
    g = STRUCTURAL_EFFECT_LEVELS[se]
    phi = FACTOR_COVARIANCE
    lam = math.sqrt(1.0 - u)
    u6 = 1.0 - (2.0 * g * g + 2.0 * g * g * phi)

    model = canonical_model()
    theta = dict.fromkeys(model.theta_names, 0.0)
    for name in ("lam1", "lam2", "lam3", "lam4", "lam5"):
        theta[name] = lam
    theta["gamma1"] = theta["gamma2"] = g
    for name in ("u1", "u2", "u3", "u4", "u5"):
        theta[name] = u
    theta["u6"] = u6
    theta["phi"] = phi
    theta_star = np.array([theta[name] for name in model.theta_names])
    sigma_pop = sigma_of_theta(model, theta_star)
    return PopulationCondition(
        label=CONDITION_LABELS[(uv, se)],
        model=model,
        theta_star=theta_star,
        sigma_pop=sigma_pop,
        epsilon_pop=0.0,
        misfit_pair=MISFIT_PAIR,
    )


def condition_from_label(label: str) -> PopulationCondition:
    """Builtin condition by its table label (``Sigma1`` .. ``Sigma4``)."""
    try:
        uv, se = _VARIANT_OF_LABEL[label]
    except KeyError:
        raise ValueError(f"unknown condition label {label!r}") from None
    return builtin_conditions(uv, se)


def misspecify_to_epsilon(
    cond: PopulationCondition, epsilon_target: float, df: int | None = None
) -> PopulationCondition:
    """Perturb a condition's population covariance to an exact RMSEA misfit.

    Adds magnitude t to the residual covariance at ``cond.misfit_pair`` and
    solves for t (safeguarded 1-d root search) so that fitting the analysis
    model to the perturbed covariance yields sqrt(F0/df) = ``epsilon_target``
    within 1e-6.  Raises :class:`TargetUnreachable` when positive
    definiteness fails before the target misfit is attained.
    """
    from .fit import population_rmsea

    if epsilon_target < 0:
        raise ValueError("epsilon_target must be nonnegative")
    if df is None:
        df = cond.model.df
    if df < 1:
        raise ValueError("df must be at least 1")
    if epsilon_target == 0.0:
        return cond
    if cond.misfit_pair is None:
        raise ValueError("condition has no designated perturbation direction")

    i, j = cond.misfit_pair
    p = cond.model.n_observed
    direction = np.zeros((p, p))
    direction[i, j] = direction[j, i] = 1.0
    base = np.asarray(cond.sigma_pop)

    def gap(t):
        return population_rmsea(cond.model, base + t * direction, df) - epsilon_target

    lo, g_lo = 0.0, gap(0.0)
    if g_lo > 0:
        raise ValueError(
            "condition already exceeds the target misfit; start from the base condition"
        )
    hi = 0.05
    g_hi = None
    for _ in range(60):
        try:
            g_hi = gap(hi)
        except (NotPositiveDefinite, NoConvergence):
            # walked past the region where the perturbed covariance is pd
            # and cleanly fittable; pull back to its edge
            hi, g_hi = _largest_evaluable(gap, lo, hi)
            if g_hi < 0:
                raise TargetUnreachable(
                    f"population covariance loses positive definiteness before "
                    f"RMSEA {epsilon_target} is reached (max attainable "
                    f"{g_hi + epsilon_target:.4f})"
                ) from None
            break
        if g_hi >= 0:
            break
        lo, g_lo = hi, g_hi
        hi *= 2.0
    else:
        raise TargetUnreachable(
            f"no perturbation in the search bracket attains RMSEA {epsilon_target}"
        )

    t = bracketed_root(gap, lo, hi, g_lo, g_hi, f_tol=2e-7)
    sigma_t = base + t * direction
    sigma_t = 0.5 * (sigma_t + sigma_t.T)
    return replace(
        cond,
        sigma_pop=sigma_t,
        epsilon_pop=float(epsilon_target),
        perturbation=float(t),
    )


def _largest_evaluable(fun, good, bad, iters=40):
    """Bisect toward the edge of fun's domain; returns (x, fun(x)) at the
    largest point that evaluates cleanly."""
    g_good = fun(good)
    for _ in range(iters):
        mid = 0.5 * (good + bad)
        try:
            g_mid = fun(mid)
        except (NotPositiveDefinite, NoConvergence):
            bad = mid
        else:
            good, g_good = mid, g_mid
    return good, g_good
