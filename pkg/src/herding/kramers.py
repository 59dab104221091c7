"""Splitting probabilities for the bistable herding dynamics.

For large N the herder success fraction obeys the Langevin equation

    dq/dtau = b(q) + sigma * sqrt(a(q)) * xi(tau),

with drift ``b = omega - q`` (see :mod:`herding.meanfield`), diffusion
``a = omega (1 - omega) + q (1 - q)`` and ``sigma**2 = 1 / (eta N)``.  The
probability ``ptilde_minus(q0)`` of being absorbed at the lower stable root
before the upper one solves the backward Kolmogorov equation

    b p' + (sigma**2 / 2) a p'' = 0,   p(q_minus) = 1,  p(q_plus) = 0,

whose solution is ``p(q0) = int_{q0}^{q_plus} exp(-psi) / int exp(-psi)``
with ``psi(q) = (2 / sigma**2) int_{q_minus}^{q} b / a``.  Averaging over the
Gaussian spread of initial conditions gives ``p_minus`` and the mean success
fraction ``<q> = p_minus q_minus + (1 - p_minus) q_plus``.

All integrals use composite Gauss-Legendre rules.  ``psi`` is tabulated on
Chebyshev-Lobatto panel boundaries over ``[q_minus, q_plus]``; inside each
panel it is represented by its values at the Gauss nodes, and partial panel
integrals use the Legendre expansion of the sampled integrand, so no value of
``psi`` is ever interpolated at low order.  Exponentials are formed only after
subtracting the largest exponent, since ``|psi|`` grows like ``eta N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import legendre

from . import meanfield
from .errors import NoEquilibriumError, ParameterError
from .meanfield import BranchSet, MeanFieldParams

GAUSSIAN_WINDOW = 8.0
CONVERGENCE_RTOL = 1e-8


@dataclass(frozen=True)
class QuadratureSpec:
    outer_nodes: int = 128
    inner_nodes: int = 128
    psi_grid: int = 2048

    def __post_init__(self):
        for name in ("outer_nodes", "inner_nodes", "psi_grid"):
            if getattr(self, name) < 8:
                raise ParameterError(f"{name} must be at least 8")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.outer_nodes, 2 * self.inner_nodes, 2 * self.psi_grid)


@lru_cache(maxsize=16)
def _gauss(n: int):
    """Nodes, weights and the partial-integral operator on [-1, 1].

    ``coeff @ f`` maps samples at the nodes to Legendre coefficients, so that
    ``_partial_basis(t) @ coeff @ f`` is the integral from -1 to t of the
    degree n-1 interpolant of f.
    """
    t, w = legendre.leggauss(n)
    vander = legendre.legvander(t, n - 1)
    k = np.arange(n)
    coeff = ((2 * k + 1) / 2.0)[:, None] * vander.T * w[None, :]
    return t, w, coeff, _partial_basis(t, n) @ coeff


def _partial_basis(t, n: int) -> np.ndarray:
    """Rows ``int_{-1}^{t} P_k(s) ds`` for k = 0..n-1."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    v = legendre.legvander(t, n)
    out = np.empty((t.size, n))
    out[:, 0] = t + 1.0
    k = np.arange(1, n)
    out[:, 1:] = (v[:, 2:] - v[:, :-1][:, : n - 1]) / (2 * k + 1)
    return out


def drift_and_diffusion(q, params: MeanFieldParams):
    """``(b(q), a(q))`` from a single binomial-tail evaluation."""
    q = np.asarray(q, dtype=float)
    upper, lower = meanfield.omega_of_q(q, params)
    b = np.where(q > 0.5, (1.0 - q) - lower, upper - q)
    a = upper * lower + q * (1.0 - q)
    return b, a


def diffusion(q, params: MeanFieldParams):
    """Langevin diffusion coefficient ``a(q) = omega (1 - omega) + q (1 - q)``."""
    a = drift_and_diffusion(q, params)[1]
    return a if a.ndim else float(a)


def initial_density(q0, eta: float, n_agents: int):
    """Gaussian density of the initial herder success fraction.

    Centred on 1/2 with variance ``1 / (4 eta N)``: the mean of ``eta N``
    fair coin flips.
    """
    scale = 2.0 * eta * n_agents
    q0 = np.asarray(q0, dtype=float)
    out = np.sqrt(scale / np.pi) * np.exp(-scale * (q0 - 0.5) ** 2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KramersParams:
    mean_field: MeanFieldParams
    n_agents: int
    branch: BranchSet
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ParameterError("n_agents must be positive")
        if not self.branch.bistable:
            raise ParameterError(
                f"splitting probability needs a bistable branch set (eta={self.mean_field.eta})"
            )
        if self.mean_field.eta <= 0:
            raise ParameterError("eta must be positive")

    @classmethod
    def build(cls, eta: float, p: float, k_peers: int, n_agents: int,
              quadrature: QuadratureSpec | None = None) -> "KramersParams":
        mf = MeanFieldParams(eta, p, k_peers)
        return cls(mf, n_agents, meanfield.find_fixed_points(mf), quadrature or QuadratureSpec())

    @property
    def sigma2(self) -> float:
        return 1.0 / (self.mean_field.eta * self.n_agents)

    @property
    def initial_width(self) -> float:
        return 1.0 / math.sqrt(4.0 * self.mean_field.eta * self.n_agents)

    def with_quadrature(self, quadrature: QuadratureSpec) -> "KramersParams":
        return KramersParams(self.mean_field, self.n_agents, self.branch, quadrature)

    @cached_property
    def table(self) -> "_PsiTable":
        return _PsiTable(self)


class _PsiTable:
    """``psi`` and the cumulative splitting integral on a panelled grid."""

    def __init__(self, params: KramersParams):
        self.params = params
        self.q_minus = params.branch.q_minus
        self.q_plus = params.branch.q_plus
        n = params.quadrature.inner_nodes
        m = params.quadrature.psi_grid
        self.order = n
        t, w, self.coeff, self.partial = _gauss(n)

        j = np.arange(m)
        frac = 0.5 * (1.0 - np.cos(np.pi * j / (m - 1)))
        edges = self.q_minus + (self.q_plus - self.q_minus) * frac
        edges[0], edges[-1] = self.q_minus, self.q_plus
        self.edges = edges
        self.half = 0.5 * np.diff(edges)
        self.nodes = 0.5 * (edges[:-1] + edges[1:])[:, None] + self.half[:, None] * t[None, :]

        mf = params.mean_field
        b, a = drift_and_diffusion(self.nodes, mf)
        slope = (2.0 / params.sigma2) * (b / a)
        self.slope = slope
        # psi at the Gauss nodes of each panel, measured from the panel's left edge
        local = self.half[:, None] * (slope @ self.partial.T)
        increments = self.half * (slope @ w)
        self.psi_edges = np.concatenate(([0.0], np.cumsum(increments)))
        self.psi_nodes = self.psi_edges[:-1, None] + local

        # splitting integrand exp(-psi), shifted by its largest nodal exponent
        self.shift = float(np.max(-self.psi_nodes))
        self.weight_nodes = np.exp(-self.psi_nodes - self.shift)
        panel_mass = self.half * (self.weight_nodes @ w)
        tail = np.concatenate((np.cumsum(panel_mass[::-1])[::-1], [0.0]))
        self.tail_edges = tail
        self.total = float(tail[0])

    def _locate(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        idx = np.clip(np.searchsorted(self.edges, q, side="right") - 1, 0, len(self.half) - 1)
        t = (q - self.edges[idx]) / self.half[idx] - 1.0
        return q, idx, np.clip(t, -1.0, 1.0)

    def _partial(self, values_rows, t):
        basis = _partial_basis(t, self.order)
        return np.einsum("ik,kj,ij->i", basis, self.coeff, values_rows)

    def psi(self, q):
        q, idx, t = self._locate(q)
        return self.psi_edges[idx] + self.half[idx] * self._partial(self.slope[idx], t)

    def tail(self, q):
        """``int_q^{q_plus} exp(-psi - shift)``."""
        q, idx, t = self._locate(q)
        head = self.half[idx] * self._partial(self.weight_nodes[idx], t)
        return (self.tail_edges[idx] - head).clip(min=0.0)


def _check_interval(q, params: KramersParams):
    q = np.asarray(q, dtype=float)
    lo, hi = params.branch.q_minus, params.branch.q_plus
    if np.any(q < lo) or np.any(q > hi):
        raise ParameterError(f"q must lie in [q_minus, q_plus] = [{lo!r}, {hi!r}]")
    return q


def log_phi(q, params: KramersParams):
    """``psi(q) = (2 / sigma**2) int_{q_minus}^{q} b / a``.

    Returned in log form only; ``exp(psi)`` overflows for realistic ``eta N``.
    The splitting probability integrates ``exp(-psi)``.
    """
    q = _check_interval(q, params)
    out = params.table.psi(q)
    return out if q.ndim else float(out[0])


def ptilde_minus(q0, params: KramersParams):
    """Probability of reaching ``q_minus`` before ``q_plus`` from ``q0``.

    Outside ``[q_minus, q_plus]`` the absorbing extension applies: 1 below,
    0 above.
    """
    q0 = np.asarray(q0, dtype=float)
    flat = np.atleast_1d(q0).astype(float)
    table = params.table
    out = np.where(flat < table.q_minus, 1.0, 0.0)
    inside = (flat >= table.q_minus) & (flat <= table.q_plus)
    if np.any(inside):
        out[inside] = np.clip(table.tail(flat[inside]) / table.total, 0.0, 1.0)
    out[flat == table.q_minus] = 1.0
    out[flat == table.q_plus] = 0.0
    return out.reshape(q0.shape) if q0.ndim else float(out[0])


@dataclass(frozen=True)
class KramersResult:
    eta: float
    n_agents: int
    p_minus: float
    q_mean: float
    psi_max: float
    converged: bool
    p_minus_refined: float | None = None

    def csv_row(self) -> dict:
        return {
            "eta": self.eta,
            "N": self.n_agents,
            "p_minus": self.p_minus,
            "q_mean": self.q_mean,
            "psi_max": self.psi_max,
            "converged": self.converged,
        }


def _outer_panels(params: KramersParams):
    width = GAUSSIAN_WINDOW * params.initial_width
    lo, hi = max(0.0, 0.5 - width), min(1.0, 0.5 + width)
    b = params.branch
    cuts = sorted({lo, hi, *(c for c in (b.q_minus, b.q_u, b.q_plus) if lo < c < hi)})
    return list(zip(cuts[:-1], cuts[1:]))


def _p_minus_value(params: KramersParams) -> float:
    n = params.quadrature.outer_nodes
    t, w = legendre.leggauss(n)
    eta, N = params.mean_field.eta, params.n_agents
    total = 0.0
    for lo, hi in _outer_panels(params):
        half = 0.5 * (hi - lo)
        x = 0.5 * (lo + hi) + half * t
        total += half * float(np.sum(w * ptilde_minus(x, params) * initial_density(x, eta, N)))
    return min(max(total, 0.0), 1.0)


def p_minus(params: KramersParams, check: bool = True) -> KramersResult:
    """Probability that a realization with Gaussian start ends at ``q_minus``.

    With ``check`` the computation is repeated with all quadrature orders
    doubled; ``converged`` reports a relative change below 1e-8.
    """
    value = _p_minus_value(params)
    refined = None
    converged = False
    if check:
        refined = _p_minus_value(params.with_quadrature(params.quadrature.doubled()))
        converged = abs(refined - value) <= CONVERGENCE_RTOL * max(abs(refined), 1e-300)
    b = params.branch
    q_mean = value * b.q_minus + (1.0 - value) * b.q_plus
    return KramersResult(
        eta=params.mean_field.eta,
        n_agents=params.n_agents,
        p_minus=value,
        q_mean=q_mean,
        psi_max=params.table.shift,
        converged=converged,
        p_minus_refined=refined,
    )


def q_mean_at(eta: float, p: float, k_peers: int, n_agents: int,
              quadrature: QuadratureSpec | None = None, check: bool = False) -> float:
    """Analytic ``<q>``; the unique stable root when the regime is monostable."""
    mf = MeanFieldParams(eta, p, k_peers)
    branch = meanfield.find_fixed_points(mf)
    if not branch.bistable:
        return branch.q_plus
    params = KramersParams(mf, n_agents, branch, quadrature or QuadratureSpec())
    return p_minus(params, check=check).q_mean


def q_mean_curve(p: float, k_peers: int, n_agents: int, etas, quadrature=None):
    """``[(eta, <q>)]`` along a sweep of herder fractions."""
    out = []
    for eta in etas:
        if not 0.0 < eta <= 1.0:
            raise ParameterError(f"eta must lie in (0, 1], got {eta!r}")
        out.append((float(eta), q_mean_at(eta, p, k_peers, n_agents, quadrature)))
    return out


LOWER, UPPER, TIMEOUT = "Lower", "Upper", "Timeout"


def langevin_ensemble(params: KramersParams, q0, dt: float, rng: np.random.Generator,
                      max_time: float = 1e4, noise_scale: float = 1.0,
                      capture: float = 0.0) -> np.ndarray:
    """Euler-Maruyama paths from each entry of ``q0``; returns basin labels.

    Paths are advanced together and frozen once they reach a stable root,
    i.e. ``q <= q_minus + capture`` (Lower) or ``q >= q_plus - capture``
    (Upper).  The default ``capture = 0`` is the first-hitting criterion
    that defines the splitting probability.  A positive width is capped at
    half the distance to the unstable root.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if capture < 0:
        raise ParameterError("capture must be non-negative")
    mf = params.mean_field
    sigma = math.sqrt(params.sigma2) * noise_scale
    q_lo, q_u, q_hi = params.branch.roots
    eps = min(capture, 0.5 * (q_u - q_lo), 0.5 * (q_hi - q_u))
    lower_edge, upper_edge = q_lo + eps, q_hi - eps
    q = np.clip(np.array(q0, dtype=float, ndmin=1), 0.0, 1.0)
    labels = np.full(q.shape, TIMEOUT, dtype=object)
    labels[q <= lower_edge] = LOWER
    labels[q >= upper_edge] = UPPER
    active = np.flatnonzero(labels == TIMEOUT)

    sqrt_dt = math.sqrt(dt)
    for _ in range(int(math.ceil(max_time / dt))):
        if active.size == 0:
            break
        x = q[active]
        noise = rng.standard_normal(active.size)
        b, a = drift_and_diffusion(x, mf)
        x = x + b * dt
        if sigma > 0:
            x += sigma * np.sqrt(np.maximum(a, 0.0)) * sqrt_dt * noise
        x = np.clip(x, 0.0, 1.0)
        q[active] = x
        lower = x <= lower_edge
        upper = x >= upper_edge
        labels[active[lower]] = LOWER
        labels[active[upper]] = UPPER
        active = active[~(lower | upper)]
    return labels


def langevin_simulate(params: KramersParams, q0: float, dt: float = 0.01,
                      rng: np.random.Generator | None = None, max_time: float = 1e4,
                      noise_scale: float = 1.0, capture: float = 0.0) -> str:
    """Integrate one Langevin path from ``q0`` and report the basin reached."""
    if not 0.0 < q0 < 1.0:
        raise ParameterError("q0 must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng()
    return str(langevin_ensemble(params, [q0], dt, rng, max_time, noise_scale, capture)[0])


def sample_initial(params: KramersParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw starting points from the Gaussian initial density."""
    return 0.5 + params.initial_width * rng.standard_normal(size)


def find_nash_eta(p: float, k_peers: int, n_agents: int, tol: float = 1e-8,
                  quadrature: QuadratureSpec | None = None, scan_points: int = 64) -> float:
    """Largest herder fraction in ``(eta_c, 1)`` where ``<q> = p``.

    The curve is scanned on a uniform grid first so that the crossing nearest
    to ``eta = 1`` is bracketed, then refined by bisection to width ``tol``.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    eta_c = meanfield.find_eta_c(p, k_peers)
    gap = lambda eta: q_mean_at(eta, p, k_peers, n_agents, quadrature) - p  # noqa: E731

    grid = np.linspace(eta_c, 1.0, scan_points + 1)
    grid[0] = eta_c + 1e-6
    values = [gap(e) for e in grid]
    bracket = None
    for i in range(len(grid) - 2, -1, -1):
        if values[i] == 0.0:
            return float(grid[i])
        if values[i] * values[i + 1] < 0.0:
            bracket = (float(grid[i]), float(grid[i + 1]), values[i])
            break
    if bracket is None:
        raise NoEquilibriumError(
            f"<q> - p does not change sign on (eta_c={eta_c:.6g}, 1) "
            f"for p={p}, K={k_peers}, N={n_agents}"
        )
    lo, hi, flo = bracket
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = gap(mid)
        if fm == 0.0:
            return mid
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
