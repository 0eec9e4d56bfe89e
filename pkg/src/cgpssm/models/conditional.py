"""Poisson regression with matched-stratum intercepts eliminated.

Conditioning on each stratum's total count turns the Poisson likelihood
into a multinomial one that no longer involves the stratum intercepts.
Its maximizer and inverse information for the remaining coefficients
coincide with those of an ordinary Poisson fit carrying one dummy column
per stratum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, DataError, RankDeficiencyError


@dataclass
class ConditionalPoissonFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    column_names: tuple
    loglik: float
    iterations: int
    n_strata: int
    dropped_strata: list = field(default_factory=list)

    @property
    def covariance(self):
        return np.diag(self.standard_errors**2)


def _encode(strata):
    labels, codes = np.unique(np.asarray(strata), return_inverse=True)
    return labels, codes.ravel()


def fit_conditional_poisson(X, y, strata, column_names=None, max_iter=100, tol=1e-12):
    """Fit the stratum-conditional Poisson model by Newton's method.

    Strata whose counts are all zero carry no information and are
    dropped (listed in ``dropped_strata``). A stratum with a single unit,
    or a covariate that is constant within every informative stratum,
    raises :class:`DataError` / :class:`RankDeficiencyError`.
    """
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, float)
    if len(y) != X.shape[0] or len(strata) != len(y):
        raise DataError("X, y and strata must have the same number of rows")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise DataError("response must be finite non-negative counts")
    p = X.shape[1]
    names = tuple(column_names) if column_names is not None else tuple(f"c{i}" for i in range(p))

    labels, codes = _encode(strata)
    sizes = np.bincount(codes, minlength=len(labels))
    if np.any(sizes < 2):
        bad = labels[np.flatnonzero(sizes < 2)[0]]
        raise DataError(f"stratum {bad!r} has a single unit; no within-stratum contrast")

    totals = np.bincount(codes, weights=y, minlength=len(labels))
    dropped = [labels[i].item() if hasattr(labels[i], "item") else labels[i]
               for i in np.flatnonzero(totals == 0)]
    keep = totals[codes] > 0
    X, y, codes = X[keep], y[keep], codes[keep]
    _, codes = np.unique(codes, return_inverse=True)
    totals = np.bincount(codes, weights=y)
    n_strata = len(totals)
    if n_strata == 0:
        raise DataError("every stratum has zero total count")

    # within-stratum centring exposes covariates with no contrast
    counts = np.bincount(codes)
    means = np.stack([np.bincount(codes, weights=X[:, j]) for j in range(p)], axis=1) / counts[:, None]
    Xc = X - means[codes]
    spread = np.abs(Xc).max(axis=0) if len(Xc) else np.zeros(p)
    flat = spread <= 1e-12 * np.maximum(np.abs(X).max(axis=0), 1.0)
    if np.any(flat):
        bad = [names[j] for j in np.flatnonzero(flat)]
        raise RankDeficiencyError(f"covariates constant within every stratum: {bad}", bad)

    beta = np.zeros(p)

    def evaluate(beta):
        eta = Xc @ beta
        emax = np.full(n_strata, -np.inf)
        np.maximum.at(emax, codes, eta)
        e = np.exp(eta - emax[codes])
        denom = np.bincount(codes, weights=e, minlength=n_strata)
        ll = float(y @ eta - np.sum(totals * (np.log(denom) + emax)))
        prob = e / denom[codes]
        return ll, prob

    ll, prob = evaluate(beta)
    it = 0
    for it in range(1, max_iter + 1):
        # multinomial score and information per stratum
        grad = Xc.T @ (y - totals[codes] * prob)
        xbar = np.stack([np.bincount(codes, weights=prob * Xc[:, j], minlength=n_strata)
                         for j in range(p)], axis=1)
        dev = Xc - xbar[codes]
        info = (dev * (totals[codes] * prob)[:, None]).T @ dev
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError("conditional information matrix is singular", names) from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, prob_new = evaluate(cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, converged = cand, abs(ll_new - ll) <= tol * (abs(ll) + 1.0)
        ll, prob = ll_new, prob_new
        if converged and np.max(np.abs(step)) < 1e-8 * (1 + np.max(np.abs(beta))):
            break
    else:
        raise ConvergenceError(f"conditional Poisson did not converge in {max_iter} iterations")

    xbar = np.stack([np.bincount(codes, weights=prob * Xc[:, j], minlength=n_strata)
                     for j in range(p)], axis=1)
    dev = Xc - xbar[codes]
    info = (dev * (totals[codes] * prob)[:, None]).T @ dev
    if not np.all(np.isfinite(beta)):
        raise ConvergenceError("conditional Poisson estimates diverged")
    cov = np.linalg.inv(info)
    return ConditionalPoissonFit(
        coefficients=beta,
        standard_errors=np.sqrt(np.diag(cov)),
        column_names=names,
        loglik=ll,
        iterations=it,
        n_strata=n_strata,
        dropped_strata=dropped,
    )
