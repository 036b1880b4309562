"""Covariance functions on revival time.

Every kernel evaluates elementwise with numpy broadcasting and carries a
drift basis: the functions relative to which it is conditionally positive
definite.  Proper covariances have an empty drift basis.  Proportionality
constants are fixed to one; overall scale belongs to the variance
components.

Generalized kernels (non-empty drift) are only meaningful on contrasts that
annihilate the drift.  :meth:`Kernel.anchored` returns a proper covariance
that agrees with the original on all such contrasts, which is what the
likelihood code factorizes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

DEFAULT_LOG_OFFSET = 1.0 / 365.25


class Kernel:
    """Base class.  Subclasses implement :meth:`__call__` and :meth:`drift`."""

    name: str = "kernel"
    stationary: bool = True

    def __call__(self, s, t):
        raise NotImplementedError

    def drift(self, s) -> np.ndarray:
        """Drift basis evaluated at ``s``: an ``(n, p)`` array, ``p`` possibly 0."""
        return np.zeros((np.size(s), 0))

    @property
    def n_drift(self) -> int:
        return self.drift(np.array([1.0, 2.0, 3.0])).shape[1]

    @property
    def is_generalized(self) -> bool:
        return self.n_drift > 0

    @property
    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if not isinstance(getattr(self, f.name), Kernel)}

    def with_params(self, **params) -> "Kernel":
        return dataclasses.replace(self, **params)

    def gram(self, s, t=None) -> np.ndarray:
        """Matrix ``K[i, j] = k(s_i, t_j)``; ``t`` defaults to ``s``."""
        s = np.asarray(s, dtype=float).ravel()
        t = s if t is None else np.asarray(t, dtype=float).ravel()
        return self(s[:, None], t[None, :])

    def anchored(self, anchors) -> "Kernel":
        """Proper covariance equivalent to this kernel on drift contrasts.

        With ``L(s) = F(s) F(A)^{-1}`` the Lagrange basis on the anchor set
        ``A``, returns ``k(s,t) - L(s)k(A,t) - k(s,A)L(t)' + L(s)k(A,A)L(t)'``,
        which differs from ``k`` by terms in the drift span only.
        """
        if not self.is_generalized:
            return self
        return AnchoredKernel(self, tuple(float(a) for a in np.ravel(anchors)))

    def default_anchors(self, points) -> np.ndarray:
        """``p`` spread-out points drawn from ``points`` (order statistics)."""
        p = self.n_drift
        pts = np.unique(np.asarray(points, dtype=float))
        if p == 0:
            return np.empty(0)
        if pts.size < p:
            raise ValueError(f"need at least {p} distinct points to anchor {self.name}")
        idx = np.round(np.linspace(0, pts.size - 1, p + 2)[1:-1]).astype(int) if p > 1 \
            else np.array([pts.size // 2])
        idx = np.unique(np.clip(idx, 0, pts.size - 1))
        if idx.size < p:
            idx = np.round(np.linspace(0, pts.size - 1, p)).astype(int)
        return pts[idx]

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if isinstance(v, Kernel) else v
        return out


@dataclass(frozen=True)
class WhiteNoise(Kernel):
    name = "white_noise"

    def __call__(self, s, t):
        return np.equal(s, t).astype(float)


@dataclass(frozen=True)
class Constant(Kernel):
    """``k = 1``: a random intercept when restricted to one patient's block."""

    name = "constant"

    def __call__(self, s, t):
        return np.ones(np.broadcast(s, t).shape)


@dataclass(frozen=True)
class Exponential(Kernel):
    lam: float = 1.0
    name = "exponential"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("exponential range must be positive")

    def __call__(self, s, t):
        return np.exp(-np.abs(np.subtract(s, t)) / self.lam)


@dataclass(frozen=True)
class FractionalBrownian(Kernel):
    """``s^nu + t^nu - |s - t|^nu`` on ``s, t >= 0``; ``nu = 1`` is 2 min(s, t)."""

    nu: float = 1.0
    name = "fractional_brownian"
    stationary = False

    def __post_init__(self):
        if not 0 < self.nu < 2:
            raise ValueError("fractional Brownian exponent must lie in (0, 2)")

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0):
            raise ValueError("fractional Brownian kernel needs non-negative times")
        return s ** self.nu + t ** self.nu - np.abs(s - t) ** self.nu


@dataclass(frozen=True)
class LinearSpline(Kernel):
    """Generalized covariance ``-|s - t|`` relative to constants."""

    name = "linear_spline"

    def __call__(self, s, t):
        return -np.abs(np.subtract(s, t))

    def drift(self, s):
        return np.ones((np.size(s), 1))


@dataclass(frozen=True)
class CubicSpline(Kernel):
    """Generalized covariance ``|s - t|^3`` relative to ``span(1, s)``."""

    name = "cubic_spline"

    def __call__(self, s, t):
        return np.abs(np.subtract(s, t)) ** 3

    def drift(self, s):
        s = np.asarray(s, dtype=float).ravel()
        return np.column_stack([np.ones_like(s), s])


@dataclass(frozen=True)
class ThinPlate(Kernel):
    """Quadratic-spline generalized covariance ``h^2 log|h|`` relative to ``span(1, s)``."""

    name = "thin_plate"

    def __call__(self, s, t):
        h = np.abs(np.subtract(s, t))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = h * h * np.log(h)
        return np.where(h > 0, out, 0.0)

    def drift(self, s):
        s = np.asarray(s, dtype=float).ravel()
        return np.column_stack([np.ones_like(s), s])


@dataclass(frozen=True)
class LogWarp(Kernel):
    """``base`` evaluated on the warped coordinate ``log(s + delta)``."""

    base: Kernel = dataclasses.field(default_factory=LinearSpline)
    delta: float = DEFAULT_LOG_OFFSET
    name = "log_warp"
    stationary = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("log-warp offset must be positive")

    def warp(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("log-warped kernels are defined for s >= 0 only")
        return np.log(s + self.delta)

    def __call__(self, s, t):
        return self.base(self.warp(s), self.warp(t))

    def drift(self, s):
        return self.base.drift(self.warp(np.asarray(s, dtype=float).ravel()))

    @property
    def params(self):
        out = {"delta": self.delta}
        out.update({f"base.{k}": v for k, v in self.base.params.items()})
        return out


@dataclass(frozen=True)
class AnchoredKernel(Kernel):
    """Proper covariance built from a generalized kernel; see :meth:`Kernel.anchored`."""

    base: Kernel = dataclasses.field(default_factory=LinearSpline)
    anchors: tuple = ()
    name = "anchored"

    def __post_init__(self):
        FA = self.base.drift(np.asarray(self.anchors))
        if FA.shape[0] != FA.shape[1]:
            raise ValueError(f"{self.base.name} needs exactly {FA.shape[1]} anchors")
        if np.linalg.matrix_rank(FA) < FA.shape[1]:
            raise ValueError("anchor points are not unisolvent for the drift basis")
        object.__setattr__(self, "_FA_inv", np.linalg.inv(FA))

    @property
    def stationary(self):
        return False

    def _lagrange(self, s):
        s = np.asarray(s, dtype=float)
        F = self.base.drift(s.ravel())
        return (F @ self._FA_inv).reshape(s.shape + (len(self.anchors),))

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        A = np.asarray(self.anchors)
        Ls = self._lagrange(s)
        Lt = self._lagrange(t)
        kAt = self.base(A, t[..., None])
        ksA = self.base(s[..., None], A)
        kAA = self.base(A[:, None], A[None, :])
        cross = np.einsum("...i,ij,...j->...", Ls, kAA, Lt)
        return (self.base(s, t) - np.sum(Ls * kAt, axis=-1)
                - np.sum(ksA * Lt, axis=-1) + cross)


KERNELS = {
    "white_noise": WhiteNoise,
    "constant": Constant,
    "exponential": Exponential,
    "fractional_brownian": FractionalBrownian,
    "linear_spline": LinearSpline,
    "cubic_spline": CubicSpline,
    "thin_plate": ThinPlate,
    "log_warp": LogWarp,
}


def white_noise() -> Kernel:
    return WhiteNoise()


def constant() -> Kernel:
    return Constant()


def exponential(lam: float) -> Kernel:
    return Exponential(float(lam))


def fractional_brownian(nu: float) -> Kernel:
    return FractionalBrownian(float(nu))


def linear_spline_generalized() -> Kernel:
    return LinearSpline()


def cubic_spline() -> Kernel:
    return CubicSpline()


def thin_plate() -> Kernel:
    return ThinPlate()


def log_warp(base: Kernel, delta: float = DEFAULT_LOG_OFFSET) -> Kernel:
    return LogWarp(base, float(delta))


def kernel_from_dict(spec) -> Kernel:
    """Inverse of :meth:`Kernel.to_dict`; a bare string names a parameterless kernel."""
    if isinstance(spec, Kernel):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name not in KERNELS:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}")
    if name == "log_warp":
        base = kernel_from_dict(spec.pop("base", "linear_spline"))
        return LogWarp(base, float(spec.pop("delta", DEFAULT_LOG_OFFSET)))
    if "lambda" in spec:
        spec["lam"] = spec.pop("lambda")
    return KERNELS[name](**{k: float(v) for k, v in spec.items()})


def gram(kernel: Kernel, S, patient_blocks=None) -> np.ndarray:
    """Gram matrix of ``kernel`` on ``S``.

    With ``patient_blocks`` (one label per point), entries for points of
    different patients are zeroed.
    """
    S = np.asarray(S, dtype=float).ravel()
    K = kernel.gram(S)
    if patient_blocks is not None:
        b = np.asarray(patient_blocks).ravel()
        if b.shape != S.shape:
            raise ValueError("patient_blocks must have one label per point")
        K = np.where(b[:, None] == b[None, :], K, 0.0)
    return 0.5 * (K + K.T)
