"""Gaussian restricted and profile likelihoods for additive covariance models.

The covariance is ``Sigma = sum_k sigma2_k G_k`` over fixed Gram matrices.
Generalized kernels must already be replaced by their anchored (proper)
equivalents, and their drift columns must lie in the span of ``X``.

For the optimizer, one reference component (the white-noise floor) carries
the overall scale, which is profiled out in closed form; the remaining
parameters are log variance ratios and log ranges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import blas

from .exceptions import ConvergenceWarning, NumericalError

LOG_2PI = np.log(2.0 * np.pi)


def add_jitter(S: np.ndarray, jitter: float, copy=True) -> np.ndarray:
    if jitter:
        S = S.copy() if copy else S
        S[np.diag_indices_from(S)] += jitter * np.mean(np.abs(np.diag(S)))
    return S


def combine(weights, grams) -> np.ndarray:
    """``sum_k w_k G_k`` accumulated in place with BLAS axpy."""
    out = np.zeros_like(grams[0])
    flat = out.reshape(-1)
    for w, G in zip(weights, grams):
        if w:
            blas.daxpy(np.ascontiguousarray(G).reshape(-1), flat, a=float(w))
    return out


def cholesky(S: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"covariance factorization failed: {exc}") from None


def _logdet_chol(L):
    return 2.0 * np.sum(np.log(np.diag(L)))


def _gls_pieces(S, X, y):
    """Cholesky-based pieces of the GLS fit of ``y`` on ``X`` with covariance ``S``."""
    L = cholesky(S)
    Xw = linalg.solve_triangular(L, X, lower=True, check_finite=False)
    yw = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    A = Xw.T @ Xw
    b = Xw.T @ yw
    LA = cholesky(A) if A.size else np.zeros((0, 0))
    if A.size:
        beta = linalg.cho_solve((LA, True), b, check_finite=False)
        quad = float(yw @ yw - b @ beta)
    else:
        beta = np.zeros(0)
        quad = float(yw @ yw)
    return L, LA, beta, quad


def _restricted_logdet(S_chol, R):
    """``log det(R' S^{-1} R) - log det(R'R)`` for the restricted columns ``R``."""
    if R.shape[1] == 0:
        return 0.0
    Rw = linalg.solve_triangular(S_chol, R, lower=True, check_finite=False)
    return (np.linalg.slogdet(Rw.T @ Rw)[1] - np.linalg.slogdet(R.T @ R)[1])


def residual_loglik(sigma2, X, y, grams, jitter=0.0) -> float:
    """Log density of the residual contrasts ``A'y`` with ``A'X = 0``, ``A'A = I``.

    Equals ``-1/2 [log det S + log det X'S^-1 X - log det X'X + y'Py
    + (n - p) log 2 pi]``, which is invariant under ``X -> XA``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    S = add_jitter(combine(sigma2, grams), jitter, copy=False)
    L, LA, _, quad = _gls_pieces(S, X, y)
    m = len(y) - X.shape[1]
    logdet_X = _logdet_chol(LA) - np.linalg.slogdet(X.T @ X)[1] if X.shape[1] else 0.0
    return -0.5 * (_logdet_chol(L) + logdet_X + quad + m * LOG_2PI)


def profile_loglik(sigma2, X, y, grams, restricted=None, jitter=0.0) -> float:
    """Likelihood of contrasts orthogonal to ``restricted``, maximized over ``beta``.

    ``restricted`` holds the drift columns of generalized kernels (empty for
    an ordinary ML likelihood); all columns of ``X`` are profiled.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    R = np.zeros((len(y), 0)) if restricted is None else np.asarray(restricted, dtype=float)
    S = add_jitter(combine(sigma2, grams), jitter, copy=False)
    L, _, _, quad = _gls_pieces(S, X, y)
    m = len(y) - R.shape[1]
    return -0.5 * (_logdet_chol(L) + _restricted_logdet(L, R) + quad + m * LOG_2PI)


@dataclass
class OptimResult:
    sigma2: np.ndarray
    ranges: dict
    loglik: float
    n_evals: int
    converged: bool
    phi: np.ndarray


class LikelihoodEngine:
    """Evaluates the scale-profiled likelihood over log ratios and log ranges.

    Parameters
    ----------
    X, y
        Full design (mean plus retained drift columns) and stacked outcomes.
    grams
        One Gram matrix per component; entries may be replaced on the fly
        for components with estimated ranges via ``builders``.
    ref
        Index of the component whose variance is profiled out.
    restricted
        Columns integrated out of the likelihood.  ``None`` means all of
        ``X`` (REML); pass the drift columns for a profile ML likelihood.
    builders
        ``{component index: (callable(range) -> Gram, initial range)}``.
    """

    def __init__(self, X, y, grams, ref, restricted=None, builders=None, jitter=1e-8,
                 floor=1e-10):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.grams = [np.asarray(G, dtype=float) for G in grams]
        self.ref = ref
        self.reml = restricted is None
        self.R = self.X if restricted is None else np.asarray(restricted, dtype=float)
        self.builders = dict(builders or {})
        self.jitter = jitter
        self.floor = floor
        self.others = [k for k in range(len(grams)) if k != ref]
        self.range_keys = sorted(self.builders)
        self.n_evals = 0
        self.m = len(self.y) - np.linalg.matrix_rank(self.R) if self.R.shape[1] else len(self.y)
        self.logdet_RR = np.linalg.slogdet(self.R.T @ self.R)[1] if self.R.shape[1] else 0.0

    @property
    def dim(self):
        return len(self.others) + len(self.range_keys)

    def unpack(self, phi):
        phi = np.asarray(phi, dtype=float)
        ratios = np.ones(len(self.grams))
        ratios[self.others] = np.exp(phi[:len(self.others)])
        ranges = {k: float(np.exp(v)) for k, v in zip(self.range_keys, phi[len(self.others):])}
        return ratios, ranges

    def grams_at(self, ranges):
        grams = list(self.grams)
        for k, value in ranges.items():
            grams[k] = self.builders[k][0](value)
        return grams

    def evaluate(self, phi):
        """Return ``(loglik, sigma2_ref, ratios, ranges)`` at ``phi``."""
        self.n_evals += 1
        ratios, ranges = self.unpack(phi)
        grams = self.grams_at(ranges)
        V = add_jitter(combine(ratios, grams), self.jitter, copy=False)
        L, LA, _, quad = _gls_pieces(V, self.X, self.y)
        if self.reml:
            restricted = _logdet_chol(LA) - self.logdet_RR if self.X.shape[1] else 0.0
        else:
            restricted = _restricted_logdet(L, self.R)
        m = self.m
        scale = quad / m
        if not scale > 0:
            raise NumericalError("non-positive residual quadratic form")
        ll = -0.5 * (m * np.log(scale) + _logdet_chol(L) + restricted + m + m * LOG_2PI)
        return ll, scale, ratios, ranges

    def objective(self, phi):
        try:
            return -self.evaluate(phi)[0]
        except NumericalError:
            return np.inf

    def _derivatives(self, ratios, ranges, grams, h=1e-5):
        """``dV/dphi`` for every free parameter (ratios, then log ranges)."""
        def jittered(G):
            D = G.copy()
            if self.jitter:
                D[np.diag_indices_from(D)] += self.jitter * np.mean(np.abs(np.diag(G)))
            return D
        out = [ratios[k] * jittered(grams[k]) for k in self.others]
        for k in self.range_keys:
            build, v = self.builders[k][0], ranges[k]
            dG = (build(v * np.exp(h)) - build(v * np.exp(-h))) / (2 * h)
            out.append(ratios[k] * jittered(dG))
        return out

    def gradient(self, phi):
        """Gradient of the scale-profiled log-likelihood with respect to ``phi``.

        With ``P`` the GLS residual projector and ``P_R`` its restricted
        counterpart, ``dl/dphi_j = -1/2 [tr(P_R D_j) - m u'D_j u / q]`` where
        ``u = P y``, ``q = y'Py`` and ``D_j = dV/dphi_j``.
        """
        ratios, ranges = self.unpack(phi)
        grams = self.grams_at(ranges)
        V = add_jitter(combine(ratios, grams), self.jitter, copy=False)
        L = cholesky(V)
        Vi = linalg.cho_solve((L, True), np.eye(len(self.y)), check_finite=False)

        def projector(M):
            if M.shape[1] == 0:
                return Vi
            VM = Vi @ M
            return Vi - VM @ linalg.solve(M.T @ VM, VM.T, assume_a="pos")

        P = projector(self.X)
        PR = P if self.reml else projector(self.R)
        u = P @ self.y
        q = float(self.y @ u)
        return np.array([-0.5 * (np.sum(PR * D) - self.m * float(u @ D @ u) / q)
                         for D in self._derivatives(ratios, ranges, grams)])

    def start(self, init_ratios=None, init_ranges=None):
        x0 = []
        for k in self.others:
            r = 1.0 if init_ratios is None else init_ratios[k]
            x0.append(np.log(max(r, self.floor)))
        for k in self.range_keys:
            v = (init_ranges or {}).get(k, self.builders[k][1])
            x0.append(np.log(v))
        return np.array(x0, dtype=float)

    def _newton_polish(self, best, lo, hi, max_iter=4, h=1e-4):
        """Refine a simplex optimum by Newton steps on the analytic score.

        Function values near the optimum differ by rounding noise only, so line
        searches on the objective stall. The score is noise free: solve it for zero
        with a central-difference Hessian, holding parameters pinned at a bound.
        """
        x = np.asarray(best.x, dtype=float).copy()
        try:
            g = self.gradient(x)
        except NumericalError:
            return best
        pinned = ((x <= lo + 1e-9) & (g < 0)) | ((x >= hi - 1e-9) & (g > 0))
        idx = np.flatnonzero(~pinned)
        moved = False
        for _ in range(max_iter):
            if idx.size == 0:
                break
            gnorm = np.max(np.abs(g[idx]))
            if gnorm < 1e-11:
                break
            H = np.empty((idx.size, idx.size))
            try:
                for a, j in enumerate(idx):
                    e = np.zeros(self.dim)
                    e[j] = h
                    H[:, a] = (self.gradient(x + e)[idx] - self.gradient(x - e)[idx]) / (2 * h)
            except NumericalError:
                break
            H = 0.5 * (H + H.T)
            if not np.all(np.isfinite(H)) or np.max(np.linalg.eigvalsh(H)) >= 0:
                break
            step = -np.linalg.solve(H, g[idx])
            if np.max(np.abs(step)) > 0.5:
                break
            trial = x.copy()
            trial[idx] += step
            trial = np.clip(trial, lo, hi)
            try:
                g_trial = self.gradient(trial)
            except NumericalError:
                break
            if not np.max(np.abs(g_trial[idx])) < gnorm:
                break
            x, g, moved = trial, g_trial, True
        if not moved:
            return best
        f = self.objective(x)
        # accept unless the likelihood drops by more than rounding noise
        if not (np.isfinite(f) and f <= best.fun + 1e-9 * max(1.0, abs(best.fun))):
            return best
        return optimize.OptimizeResult(x=x, fun=f, success=best.success)

    def maximize(self, x0, n_restarts=3, tol=1e-6, max_iter=2000, random_state=0, step=1.0,
                 xatol=1e-4, polish=True):
        if self.dim == 0:
            ll, scale, ratios, ranges = self.evaluate(np.zeros(0))
            return OptimResult(scale * ratios, ranges, ll, self.n_evals, True, np.zeros(0))
        rng = np.random.default_rng(random_state)
        lo = np.full(self.dim, np.log(self.floor))
        hi = np.full(self.dim, np.log(1e10))
        lo[len(self.others):] = np.log(1e-6)
        hi[len(self.others):] = np.log(1e6)
        bounds = optimize.Bounds(lo, hi)
        best = None
        converged = True
        start = np.clip(x0, lo, hi)
        for attempt in range(n_restarts + 1):
            if attempt:
                start = np.clip(best.x + rng.normal(0.0, 0.5 * step, self.dim), lo, hi)
            simplex = np.vstack([start] + [np.clip(start + step * e, lo, hi)
                                           if not np.allclose(np.clip(start + step * e, lo, hi), start)
                                           else np.clip(start - step * e, lo, hi)
                                           for e in np.eye(self.dim)])
            res = optimize.minimize(self.objective, start, method="Nelder-Mead", bounds=bounds,
                                    options={"fatol": tol, "xatol": xatol, "maxiter": max_iter,
                                             "maxfev": 2 * max_iter, "initial_simplex": simplex})
            if best is None or res.fun < best.fun:
                best = res
                converged = bool(res.success)
        if not np.isfinite(best.fun):
            raise NumericalError("likelihood could not be evaluated at any starting point")
        if polish:
            best = self._newton_polish(best, lo, hi)
        if not converged:
            warnings.warn("Nelder-Mead stopped on its iteration budget; keeping the best iterate",
                          ConvergenceWarning, stacklevel=3)
        ll, scale, ratios, ranges = self.evaluate(best.x)
        return OptimResult(scale * ratios, ranges, ll, self.n_evals, converged, best.x)
