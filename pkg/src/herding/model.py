"""Exact finite-N agent dynamics.

Informed agents hold a quenched private signal ``h_i = +-1`` and copy it as
soon as they are updated.  Herders hold no signal and adopt the majority spin
of a fixed, directed group of K peers.  One update picks an agent uniformly
at random over the whole population.  Runs stop at an absorbing
configuration, where no single update would change any spin.

The inner loops are compiled with numba and release the GIL, so ensembles
can be spread over a thread pool.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError, UndefinedObservableError
from .meanfield import BranchSet
from .rng import substream

NO_FLIP_TRIGGER = 8


class Role(enum.IntEnum):
    INFORMED = 0
    HERDER = 1


class Basin(enum.Enum):
    LOWER = "Lower"
    UPPER = "Upper"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class ModelParams:
    n_agents: int
    eta: float
    p: float
    k_peers: int
    seed: int = 0

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 2:
            raise ParameterError(f"n_agents must be an integer >= 2, got {self.n_agents!r}")
        if not 0.0 < self.eta <= 1.0:
            raise ParameterError(f"eta must lie in (0, 1], got {self.eta!r}")
        if not 0.5 < self.p < 1.0:
            raise ParameterError(f"p must lie in (1/2, 1), got {self.p!r}")
        k = self.k_peers
        if int(k) != k or k < 1 or k % 2 == 0:
            raise ParameterError(f"k_peers must be a positive odd integer, got {k!r}")
        if k > self.n_agents - 1:
            raise ParameterError(f"k_peers={k} needs at least {k + 1} agents")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")

    @property
    def n_herders(self) -> int:
        return int(round(self.eta * self.n_agents))

    @property
    def effective_eta(self) -> float:
        return self.n_herders / self.n_agents

    @property
    def default_max_steps(self) -> int:
        return 200 * self.n_agents * math.ceil(math.log(self.n_agents))


@dataclass
class PopulationState:
    """Mutable simulation state.

    ``peers`` has one row per agent; rows of informed agents are filled with
    -1 and never read.
    """

    spins: np.ndarray
    roles: np.ndarray
    signals: np.ndarray
    peers: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.spins.size

    @property
    def herders(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.HERDER)

    @property
    def n_herders(self) -> int:
        return int(np.count_nonzero(self.roles == Role.HERDER))

    def peer_group(self, i: int) -> np.ndarray:
        if self.roles[i] != Role.HERDER:
            raise ValueError(f"agent {i} is informed and has no peer group")
        return self.peers[i]


@dataclass(frozen=True)
class RealizationOutcome:
    q_final: float
    steps: int
    converged: bool
    basin: Basin
    herder_updates: int = 0

    @property
    def herder_clock_ratio(self) -> float:
        """Herder updates per attempted update; converts steps to herder time."""
        return self.herder_updates / self.steps if self.steps else 0.0


@numba.njit(nogil=True, cache=True)
def _floyd_peers(rng, n, owner, k, out):
    # Floyd's sampling of k distinct values from range(n - 1), shifted past owner
    count = 0
    for j in range(n - 1 - k, n - 1):
        t = int(rng.random() * (j + 1))
        if t > j:
            t = j
        seen = False
        for c in range(count):
            if out[c] == t:
                seen = True
                break
        out[count] = j if seen else t
        count += 1
    for c in range(k):
        if out[c] >= owner:
            out[c] += 1


@numba.njit(nogil=True, cache=True)
def _fill_peers(rng, n, herders, k, peers):
    for h in herders:
        _floyd_peers(rng, n, h, k, peers[h])


def build_population(params: ModelParams, rng: np.random.Generator) -> PopulationState:
    """Draw roles, quenched signals, peer groups and initial spins."""
    n, k = params.n_agents, params.k_peers
    herders = np.sort(rng.choice(n, size=params.n_herders, replace=False))
    roles = np.full(n, Role.INFORMED, dtype=np.int8)
    roles[herders] = Role.HERDER
    informed = np.flatnonzero(roles == Role.INFORMED)
    signals = np.zeros(n, dtype=np.int8)
    signals[informed] = np.where(rng.random(informed.size) < params.p, 1, -1)
    peers = np.full((n, k), -1, dtype=np.int64)
    _fill_peers(rng, n, herders.astype(np.int64), k, peers)
    spins = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    return PopulationState(spins, roles, signals, peers)


@numba.njit(nogil=True, cache=True)
def _target(spins, roles, signals, peers, i):
    if roles[i] == 0:
        return signals[i]
    total = 0
    for j in peers[i]:
        total += spins[j]
    return 1 if total > 0 else -1


@numba.njit(nogil=True, cache=True)
def _is_fixed(spins, roles, signals, peers):
    for i in range(spins.size):
        if _target(spins, roles, signals, peers, i) != spins[i]:
            return False
    return True


@numba.njit(nogil=True, cache=True)
def _run(spins, roles, signals, peers, rng, max_steps, trigger):
    n = spins.size
    steps = 0
    herder_updates = 0
    last_flip = 0
    last_sweep = 0
    while steps < max_steps:
        i = int(rng.random() * n)
        if i >= n:
            i = n - 1
        new = _target(spins, roles, signals, peers, i)
        steps += 1
        if roles[i] == 1:
            herder_updates += 1
        if new != spins[i]:
            spins[i] = new
            last_flip = steps
        if steps - last_sweep >= n or steps - last_flip >= trigger:
            last_sweep = steps
            if _is_fixed(spins, roles, signals, peers):
                return steps, herder_updates, True
    return steps, herder_updates, _is_fixed(spins, roles, signals, peers)


def update_agent(state: PopulationState, i: int) -> int:
    """Apply the update rule to agent ``i``; returns new spin minus old spin."""
    new = int(_target(state.spins, state.roles, state.signals, state.peers, i))
    old = int(state.spins[i])
    state.spins[i] = new
    return new - old


def measure_q(state: PopulationState) -> float:
    """Fraction of herders holding the correct (+1) forecast."""
    herders = state.roles == Role.HERDER
    n_h = int(np.count_nonzero(herders))
    if n_h == 0:
        raise UndefinedObservableError("q is undefined without herders")
    return int(np.count_nonzero(state.spins[herders] == 1)) / n_h


def is_fixed_point(state: PopulationState) -> bool:
    return bool(_is_fixed(state.spins, state.roles, state.signals, state.peers))


def classify_basin(q: float, branch: BranchSet | None) -> Basin:
    if branch is None or not branch.bistable:
        return Basin.UNRESOLVED
    if q < branch.q_u:
        return Basin.LOWER
    if q > branch.q_u:
        return Basin.UPPER
    return Basin.UNRESOLVED


def run_to_fixed_point(state: PopulationState, rng: np.random.Generator, max_steps: int,
                       branch: BranchSet | None = None) -> RealizationOutcome:
    """Run asynchronous updates until absorption or ``max_steps`` attempts.

    A full absorption check runs every N attempts, and immediately whenever
    ``8 N`` attempts pass without a flip.
    """
    if max_steps < 1:
        raise ParameterError("max_steps must be at least 1")
    n = state.n_agents
    steps, herder_updates, converged = _run(
        state.spins, state.roles, state.signals, state.peers, rng,
        int(max_steps), NO_FLIP_TRIGGER * n,
    )
    q = measure_q(state)
    return RealizationOutcome(
        q_final=q,
        steps=int(steps),
        converged=bool(converged),
        basin=classify_basin(q, branch),
        herder_updates=int(herder_updates),
    )


def run_realization(params: ModelParams, index: int, max_steps: int | None = None,
                    branch: BranchSet | None = None) -> RealizationOutcome:
    """One seeded realization; identical for identical ``(params, index)``."""
    state = build_population(params, substream(params.seed, index, "population"))
    return run_to_fixed_point(
        state,
        substream(params.seed, index, "dynamics"),
        max_steps or params.default_max_steps,
        branch,
    )


def run_ensemble(params: ModelParams, n_realizations: int, max_steps: int | None = None,
                 branch: BranchSet | None = None, workers: int = 1,
                 start_index: int = 0) -> list[RealizationOutcome]:
    """Independent realizations ``start_index .. start_index + n - 1``, in index order."""
    if n_realizations < 1:
        raise ParameterError("n_realizations must be at least 1")
    indices = range(start_index, start_index + n_realizations)
    if workers <= 1:
        return [run_realization(params, i, max_steps, branch) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: run_realization(params, i, max_steps, branch), indices))
