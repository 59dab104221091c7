"""Mean-field self-consistency for the herding model.

A herder is right when the majority of its K peers is right.  If every agent
is right independently with probability ``pi = (1 - eta) p + eta q`` the
herder success rate is the upper binomial tail ``omega(pi, K)``, so the
stationary states solve ``q = omega(pi(q), K)``.  The same map defines the
drift ``b(q) = omega(pi(q)) - q`` of the Langevin description in
:mod:`herding.kramers`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateRegimeError, NoTransitionError, ParameterError

MAX_K = 63
GRID_POINTS = 4097
DEFAULT_TOL = 1e-12


class Stability(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"


class Regime(enum.Enum):
    MONOSTABLE = "Monostable"
    BISTABLE = "Bistable"


def _check_k(k_peers: int) -> None:
    if int(k_peers) != k_peers or k_peers < 1 or k_peers % 2 == 0:
        raise ParameterError(f"k_peers must be a positive odd integer, got {k_peers!r}")
    if k_peers > MAX_K:
        raise ParameterError(f"k_peers={k_peers} exceeds supported maximum {MAX_K}")


@dataclass(frozen=True)
class MeanFieldParams:
    eta: float
    p: float
    k_peers: int

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta!r}")
        if not 0.5 < self.p < 1.0:
            raise ParameterError(f"p must lie in (1/2, 1), got {self.p!r}")
        _check_k(self.k_peers)


@lru_cache(maxsize=None)
def _binomial_row(k: int) -> np.ndarray:
    return np.array([float(math.comb(k, g)) for g in range(k + 1)])


def _powers(x: np.ndarray, k: int) -> np.ndarray:
    out = np.empty(x.shape[:-1] + (k + 1,))
    out[..., 0] = 1.0
    out[..., 1:] = x
    return np.cumprod(out, axis=-1)


def _tails(pi, pi_c, k: int):
    """Return ``(upper, lower)`` binomial tails for success probability ``pi``.

    ``pi_c`` is ``1 - pi`` supplied separately so that callers close to 0 or 1
    can pass a complement computed without cancellation.  Both tails are sums
    of positive terms and are accurate to a few ulps in relative terms, so
    neither is ever obtained as ``1 - other``.
    """
    pi = np.asarray(pi, dtype=float)[..., None]
    pi_c = np.asarray(pi_c, dtype=float)[..., None]
    m = (k + 1) // 2
    terms = _binomial_row(k) * _powers(pi, k) * _powers(pi_c, k)[..., ::-1]
    upper = terms[..., m:].sum(axis=-1)
    lower = terms[..., :m].sum(axis=-1)
    return upper, lower


def omega(pi, k_peers: int):
    """Probability that the majority of ``k_peers`` Bernoulli(pi) votes is right."""
    _check_k(k_peers)
    pi = np.asarray(pi, dtype=float)
    upper, _ = _tails(pi, 1.0 - pi, k_peers)
    return upper if upper.ndim else float(upper)


def omega_prime(pi, k_peers: int):
    """Analytic derivative of :func:`omega` with respect to ``pi``."""
    m = (k_peers + 1) // 2
    pi = np.asarray(pi, dtype=float)
    half = (k_peers - 1) // 2
    out = m * math.comb(k_peers, m) * (pi * (1.0 - pi)) ** half
    return out if np.ndim(out) else float(out)


def pi_of_q(q, params: MeanFieldParams):
    """Success probability of a uniformly chosen agent, ``(1 - eta) p + eta q``."""
    return (1.0 - params.eta) * params.p + params.eta * np.asarray(q, dtype=float)


def _pi_pair(q, params: MeanFieldParams):
    q = np.asarray(q, dtype=float)
    eta, p = params.eta, params.p
    pi = (1.0 - eta) * p + eta * q
    pi_c = (1.0 - eta) * (1.0 - p) + eta * (1.0 - q)
    return pi, pi_c


def omega_of_q(q, params: MeanFieldParams):
    """Return ``(omega, 1 - omega)`` evaluated at ``pi(q)``, both cancellation free."""
    pi, pi_c = _pi_pair(q, params)
    return _tails(pi, pi_c, params.k_peers)


def drift(q, params: MeanFieldParams):
    """Deterministic drift ``b(q) = omega(pi(q)) - q``."""
    q = np.asarray(q, dtype=float)
    upper, lower = omega_of_q(q, params)
    # near q = 1 both omega and q approach 1; subtract the complements instead
    b = np.where(q > 0.5, (1.0 - q) - lower, upper - q)
    return b if b.ndim else float(b)


def drift_derivative(q, params: MeanFieldParams):
    """``b'(q) = eta * omega'(pi(q)) - 1``; its sign at a root gives stability."""
    pi, _ = _pi_pair(q, params)
    d = params.eta * omega_prime(pi, params.k_peers) - 1.0
    return d if np.ndim(d) else float(d)


@dataclass(frozen=True)
class BranchSet:
    """Fixed points of ``q = omega(pi(q))`` for one parameter set, sorted ascending."""

    params: MeanFieldParams
    roots: tuple
    stabilities: tuple
    regime: Regime

    @property
    def q_minus(self):
        return self.roots[0] if self.regime is Regime.BISTABLE else None

    @property
    def q_u(self):
        return self.roots[1] if self.regime is Regime.BISTABLE else None

    @property
    def q_plus(self):
        return self.roots[-1]

    @property
    def bistable(self) -> bool:
        return self.regime is Regime.BISTABLE

    def csv_row(self) -> dict:
        return {
            "eta": self.params.eta,
            "q_minus": self.q_minus,
            "q_u": self.q_u,
            "q_plus": self.q_plus,
            "regime": self.regime.value,
        }


def _bisect(f, lo: float, hi: float, flo: float, tol: float) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _extremum(f, lo: float, hi: float, sign: float):
    """Locate the extremum of ``f`` on ``[lo, hi]`` closest to zero.

    ``sign`` is the sign of ``f`` on the bracket ends: for positive ends the
    minimum is sought, for negative ends the maximum.
    """
    res = minimize_scalar(lambda x: sign * f(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14})
    return float(res.x), float(sign * res.fun)


def find_fixed_points(params: MeanFieldParams, tol: float = DEFAULT_TOL) -> BranchSet:
    """Scan the drift for sign changes and refine every root by bisection.

    Raises :class:`DegenerateRegimeError` when the root count is not 1 or 3,
    which only happens at (or within roughly ``tol`` of) the fold where two
    roots merge, or for the identically-zero drift of ``K = 1, eta = 1``.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    f = lambda x: float(drift(x, params))  # noqa: E731
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    values = drift(grid, params)
    if np.all(values == 0.0):
        raise DegenerateRegimeError("drift vanishes identically", [(0.0, 1.0)])

    exact = [float(x) for x in grid[values == 0.0]]
    crossing = np.flatnonzero(values[:-1] * values[1:] < 0.0)
    brackets = [(float(grid[i]), float(grid[i + 1])) for i in crossing]

    # A pair of roots closer than the grid spacing shows up as a shallow
    # extremum of the drift with no sign change around it.
    v0, v1, v2 = values[:-2], values[1:-1], values[2:]
    shallow = (v0 * v1 > 0.0) & (v1 * v2 > 0.0)
    shallow &= (np.abs(v1) <= np.abs(v0)) & (np.abs(v1) <= np.abs(v2))
    for i in np.flatnonzero(shallow) + 1:
        v1 = values[i]
        sign = 1.0 if v1 > 0 else -1.0
        x_ext, f_ext = _extremum(f, float(grid[i - 1]), float(grid[i + 1]), sign)
        if abs(f_ext) < 10.0 * tol:
            raise DegenerateRegimeError(
                f"drift is tangent to zero near q={x_ext:.6g} (eta={params.eta})",
                brackets + [(float(grid[i - 1]), float(grid[i + 1]))],
            )
        if f_ext * sign < 0.0:
            brackets.append((float(grid[i - 1]), x_ext))
            brackets.append((x_ext, float(grid[i + 1])))

    roots = list(exact)
    for lo, hi in brackets:
        roots.append(_bisect(f, lo, hi, f(lo), tol))
    roots.sort()

    for r0, r1 in zip(roots, roots[1:]):
        if r1 - r0 < 1e3 * tol:
            sign = 1.0 if f(0.5 * (r0 + r1)) > 0 else -1.0
            _, f_ext = _extremum(f, r0, r1, -sign)
            if abs(f_ext) < 10.0 * tol:
                raise DegenerateRegimeError(
                    f"roots {r0!r} and {r1!r} are merging (eta={params.eta})", brackets
                )

    if len(roots) not in (1, 3):
        raise DegenerateRegimeError(
            f"found {len(roots)} fixed points at eta={params.eta}", brackets
        )
    stabilities = tuple(
        Stability.STABLE if drift_derivative(r, params) < 0 else Stability.UNSTABLE
        for r in roots
    )
    if len(roots) == 1:
        regime = Regime.MONOSTABLE
        expected = (Stability.STABLE,)
    else:
        regime = Regime.BISTABLE
        expected = (Stability.STABLE, Stability.UNSTABLE, Stability.STABLE)
    if stabilities != expected:
        raise DegenerateRegimeError(
            f"unexpected stability pattern {[s.value for s in stabilities]}", brackets
        )
    return BranchSet(params, tuple(roots), stabilities, regime)


def _is_bistable(eta: float, p: float, k_peers: int, at_fold: bool) -> bool:
    try:
        return find_fixed_points(MeanFieldParams(eta, p, k_peers)).bistable
    except DegenerateRegimeError:
        return at_fold


def find_eta_c(p: float, k_peers: int, tol: float = 1e-9) -> float:
    """Smallest herder fraction at which three fixed points coexist."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    MeanFieldParams(0.0, p, k_peers)
    if not _is_bistable(1.0, p, k_peers, at_fold=False):
        raise NoTransitionError(f"no bistable regime for p={p}, K={k_peers}")
    if _is_bistable(0.0, p, k_peers, at_fold=True):
        raise NoTransitionError(f"already bistable at eta=0 for p={p}, K={k_peers}")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _is_bistable(mid, p, k_peers, at_fold=True):
            hi = mid
        else:
            lo = mid
    return hi
