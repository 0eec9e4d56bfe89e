"""Generalized linear models fitted by iteratively reweighted least squares.

Each iteration solves the weighted least-squares problem by QR. If the
deviance goes up the step is halved until it does not, so the recorded
deviance history is non-increasing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from ..errors import ConvergenceError, DataError, ParameterError, RankDeficiencyError, SeparationError

FAMILIES = ("linear", "logistic", "poisson")

MAX_ITER = 100
REL_TOL = 1e-10
SEPARATION_NORM = 1e3


@dataclass
class FittedModel:
    family: str
    coefficients: np.ndarray
    column_names: tuple
    residual_sd: float | None = None
    converged: bool = True
    iterations: int = 0
    deviance: float = float("nan")
    deviance_history: list = field(default_factory=list)
    covariance: np.ndarray | None = None
    degenerate: bool = False
    # set by fit_spatial_glm
    smooth: object | None = None
    penalty: float | None = None
    edf: float | None = None
    gcv: float | None = None
    # which rows the model was trained on, e.g. "exposed"
    subset: str | None = None

    def linear_predictor(self, X, coords=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.smooth is not None:
            if coords is None:
                raise DataError("spatial model needs coordinates for prediction")
            X = np.hstack([X, self.smooth.basis(coords)])
        if X.shape[1] != len(self.coefficients):
            raise DataError(
                f"design has {X.shape[1]} columns, model expects {len(self.coefficients)}"
            )
        return X @ self.coefficients

    def predict(self, X, coords=None) -> np.ndarray:
        """Mean response: identity, expit or exp of the linear predictor."""
        return _inverse_link(self.family, self.linear_predictor(X, coords))

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def to_dict(self) -> dict:
        doc = {
            "family": self.family,
            "column_names": list(self.column_names),
            "coefficients": [float(c) for c in self.coefficients],
            "residual_sd": self.residual_sd,
            "converged": self.converged,
            "iterations": self.iterations,
            "deviance": self.deviance,
            "penalty": self.penalty,
            "edf": self.edf,
            "gcv": self.gcv,
            "subset": self.subset,
            "smooth": None if self.smooth is None else self.smooth.to_dict(),
        }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        from .spatial_glm import RadialBasis

        smooth = doc.get("smooth")
        return cls(
            family=doc["family"],
            coefficients=np.asarray(doc["coefficients"], dtype=float),
            column_names=tuple(doc["column_names"]),
            residual_sd=doc.get("residual_sd"),
            converged=doc.get("converged", True),
            iterations=doc.get("iterations", 0),
            deviance=doc.get("deviance", float("nan")),
            penalty=doc.get("penalty"),
            edf=doc.get("edf"),
            gcv=doc.get("gcv"),
            subset=doc.get("subset"),
            smooth=None if smooth is None else RadialBasis.from_dict(smooth),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def _inverse_link(family, eta):
    if family == "linear":
        return eta
    if family == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * eta))
    if family == "poisson":
        return np.exp(np.minimum(eta, 700.0))
    raise ParameterError(f"unknown family {family!r}")


def unit_deviance(family, y, mu):
    if family == "linear":
        return (y - mu) ** 2
    if family == "logistic":
        mu = np.clip(mu, 1e-300, 1 - 1e-16)
        return 2.0 * (xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu)))
    return 2.0 * (xlogy(y, y / np.maximum(mu, 1e-300)) - (y - mu))


def deviance(family, y, mu, weights=None):
    d = unit_deviance(family, y, mu)
    return float(np.sum(d if weights is None else weights * d))


def _variance(family, mu):
    if family == "linear":
        return np.ones_like(mu)
    if family == "logistic":
        return mu * (1.0 - mu)
    return mu


def score(family, X, y, beta, weights=None, offset=None) -> np.ndarray:
    """Gradient of the log-likelihood (canonical links: X'W(y - mu))."""
    eta = X @ beta + (0.0 if offset is None else offset)
    mu = _inverse_link(family, eta)
    r = y - mu
    if weights is not None:
        r = r * weights
    return X.T @ r


def check_rank(X, column_names, tol=1e-9):
    """Raise RankDeficiencyError naming a set of collinear columns."""
    if X.shape[1] == 0:
        return
    scale = np.linalg.norm(X, axis=0)
    zero = scale == 0
    if np.any(zero):
        names = [column_names[i] for i in np.flatnonzero(zero)]
        raise RankDeficiencyError(f"design columns are identically zero: {names}", names)
    _, s, vt = np.linalg.svd(X / scale, full_matrices=False)
    if s[-1] < tol * s[0]:
        null = vt[-1]
        involved = np.flatnonzero(np.abs(null) > 1e-6 * np.abs(null).max())
        names = [column_names[i] for i in involved]
        raise RankDeficiencyError(f"design is rank deficient; collinear columns: {names}", names)


def _validate_response(family, y):
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    if family == "logistic" and not np.all((y == 0) | (y == 1)):
        raise DataError("logistic response must be binary 0/1")
    if family == "poisson" and np.any(y < 0):
        raise DataError("poisson response must be non-negative")


def _initial_eta(family, y):
    if family == "linear":
        return np.full_like(y, y.mean())
    if family == "logistic":
        m = (y + 0.5) / 2.0
        return np.log(m / (1 - m))
    return np.log(y + 0.1)


def irls(family, X, y, weights=None, offset=None, penalty_matrix=None, beta0=None,
         max_iter=MAX_ITER, tol=REL_TOL):
    """Core (optionally penalized) IRLS loop.

    Returns ``(beta, deviance_history, converged, info)`` where ``info``
    holds the final working weights and the inverse penalized information.
    The objective tracked for step-halving is deviance plus the penalty
    ``beta' S beta``.
    """
    n, p = X.shape
    w_prior = np.ones(n) if weights is None else np.asarray(weights, float)
    off = np.zeros(n) if offset is None else np.asarray(offset, float)
    S = penalty_matrix

    def objective(beta):
        mu = _inverse_link(family, X @ beta + off)
        obj = deviance(family, y, mu, w_prior)
        if S is not None:
            obj += float(beta @ S @ beta)
        return obj

    if beta0 is None:
        eta = _initial_eta(family, y)
        beta = None
    else:
        beta = np.asarray(beta0, float).copy()
        eta = X @ beta + off
    history = []
    converged = False
    prev = math.inf
    for it in range(1, max_iter + 1):
        mu = _inverse_link(family, eta)
        var = np.maximum(_variance(family, mu), 1e-12)
        # canonical links: d eta / d mu = 1 / var
        z = (eta - off) + (y - mu) / var if family != "linear" else y - off
        wts = w_prior * (var if family != "linear" else 1.0)
        A = X.T @ (wts[:, None] * X)
        if S is not None:
            A = A + S
        b = X.T @ (wts * z)
        try:
            new = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            new = np.linalg.lstsq(A, b, rcond=None)[0]
        obj = objective(new)
        if beta is not None:
            halvings = 0
            while (not np.isfinite(obj) or obj > prev * (1 + 1e-13) + 1e-300) and halvings < 40:
                new = 0.5 * (new + beta)
                obj = objective(new)
                halvings += 1
            if obj > prev:
                new, obj = beta, prev
        history.append(obj)
        if family == "logistic" and np.linalg.norm(new) > SEPARATION_NORM and obj < prev:
            raise SeparationError(
                f"logistic fit diverging (||beta|| = {np.linalg.norm(new):.3g} after {it} "
                "iterations with deviance still decreasing); the classes look separable"
            )
        beta = new
        eta = X @ beta + off
        if family == "linear" and S is None:
            converged = True
            break
        if abs(prev - obj) <= tol * (abs(obj) + tol):
            converged = True
            break
        prev = obj
    mu = _inverse_link(family, eta)
    var = np.maximum(_variance(family, mu), 1e-300)
    wts = w_prior * (var if family != "linear" else 1.0)
    A = X.T @ (wts[:, None] * X)
    info = {"weights": wts, "xtwx": A}
    A_pen = A if S is None else A + S
    try:
        info["inv"] = np.linalg.inv(A_pen)
    except np.linalg.LinAlgError:
        info["inv"] = np.linalg.pinv(A_pen)
    return beta, history, converged, info


def fit_glm(X, y, family, column_names=None, weights=None, offset=None) -> FittedModel:
    """Fit a linear, logistic or Poisson GLM with canonical link.

    ``weights`` are prior (frequency-style) weights. Raises
    :class:`RankDeficiencyError` for collinear designs,
    :class:`SeparationError` when a logistic fit diverges, and
    :class:`ConvergenceError` after 100 iterations without convergence.
    """
    if family not in FAMILIES:
        raise ParameterError(f"family must be one of {FAMILIES}, got {family!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise DataError("design must be 2-D with one row per response")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains non-finite entries")
    n, p = X.shape
    if n < p:
        raise DataError(f"need rows >= columns, got {n} x {p}")
    names = tuple(column_names) if column_names is not None else tuple(f"c{i}" for i in range(p))
    _validate_response(family, y)
    check_rank(X, names)

    beta, history, converged, info = irls(family, X, y, weights=weights, offset=offset)
    if not converged and family == "logistic":
        raise SeparationError(
            f"logistic IRLS failed to converge in {MAX_ITER} iterations "
            f"(||beta|| = {np.linalg.norm(beta):.3g}); the classes look separable"
        )
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {MAX_ITER} iterations")
    if family != "linear":
        # a few plain Newton steps drive the score to round-off level
        beta = _polish(family, X, y, beta, weights, offset)
    mu = _inverse_link(family, X @ beta + (0.0 if offset is None else offset))
    dev = deviance(family, y, mu, weights)
    model = FittedModel(
        family=family,
        coefficients=beta,
        column_names=names,
        converged=True,
        iterations=len(history),
        deviance=dev,
        deviance_history=history,
    )
    if family == "linear":
        w = np.ones(n) if weights is None else np.asarray(weights, float)
        rss = float(np.sum(w * (y - mu) ** 2))
        dof = (w.sum() if weights is not None else n) - p
        sd = math.sqrt(rss / dof) if dof > 0 else 0.0
        model.degenerate = sd <= 1e-10 * max(1.0, float(np.abs(y).max()))
        model.residual_sd = sd
        model.covariance = info["inv"] * sd**2
    else:
        var = _variance(family, mu) * (1.0 if weights is None else np.asarray(weights, float))
        model.covariance = np.linalg.pinv(X.T @ (var[:, None] * X))
    return model


def _polish(family, X, y, beta, weights, offset, steps=3):
    off = 0.0 if offset is None else offset
    wp = 1.0 if weights is None else np.asarray(weights, float)
    for _ in range(steps):
        mu = _inverse_link(family, X @ beta + off)
        g = X.T @ (wp * (y - mu))
        if np.max(np.abs(g)) < 1e-13 * max(1.0, np.abs(y).sum()):
            break
        H = X.T @ ((wp * _variance(family, mu))[:, None] * X)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        cand = beta + step
        d_old = deviance(family, y, mu, weights)
        d_new = deviance(family, y, _inverse_link(family, X @ cand + off), weights)
        if d_new <= d_old + 1e-12 * abs(d_old):
            beta = cand
        else:
            break
    return beta
