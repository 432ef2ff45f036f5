"""Continuous-to-discrete action mapping.

The actor emits a continuous vector ``a_hat``; the mappers here turn it into a
point on the environment's discrete action grid. ``discretize_base`` is the
plain clip/scale/round map (also the MinMax baseline), ``sa_search`` is the
dynamic neighborhood construction search guided by critic Q-values, and
``knn_map`` is the k-nearest-neighbor baseline over an enumerated space.

Internally discrete actions are handled as integer grid indices so that
equality and deduplication are exact; values are ``a_min + index * step``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

QOracle = Callable[[np.ndarray, np.ndarray], np.ndarray]
"""``oracle(state, actions)`` with ``actions`` of shape (B, N) returns B Q-values."""


class CardinalityExceeded(RuntimeError):
    """The action space is too large to enumerate."""


@dataclass(frozen=True)
class ActionSpaceSpec:
    n_dims: int
    a_min: tuple
    a_max: tuple
    grid_step: tuple
    c_min: float = -1.0
    c_max: float = 1.0

    def __post_init__(self):
        for name in ("a_min", "a_max", "grid_step"):
            v = getattr(self, name)
            if np.ndim(v) == 0:
                v = (float(v),) * self.n_dims
            v = tuple(float(x) for x in v)
            if len(v) != self.n_dims:
                raise ValueError(f"{name} has {len(v)} entries, expected {self.n_dims}")
            object.__setattr__(self, name, v)
        if not self.c_min < self.c_max:
            raise ValueError("c_min must be below c_max")
        for lo, hi, step in zip(self.a_min, self.a_max, self.grid_step):
            if not lo < hi:
                raise ValueError(f"a_min {lo} must be below a_max {hi}")
            if step <= 0:
                raise ValueError("grid_step must be positive")
            ratio = (hi - lo) / step
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"range [{lo}, {hi}] is not a multiple of step {step}")
        object.__setattr__(self, "_low", np.array(self.a_min))
        object.__setattr__(self, "_high", np.array(self.a_max))
        object.__setattr__(self, "_step", np.array(self.grid_step))
        object.__setattr__(self, "_levels",
                           np.rint((self._high - self._low) / self._step).astype(np.int64))

    @classmethod
    def uniform(cls, n_dims, a_min, a_max, grid_step=1.0, c_min=-1.0, c_max=1.0):
        return cls(n_dims, (a_min,) * n_dims, (a_max,) * n_dims, (grid_step,) * n_dims,
                   c_min, c_max)

    @property
    def low(self) -> np.ndarray:
        return self._low

    @property
    def high(self) -> np.ndarray:
        return self._high

    @property
    def step(self) -> np.ndarray:
        return self._step

    @property
    def max_index(self) -> np.ndarray:
        """Largest grid index per entry (number of grid points minus one)."""
        return self._levels

    def cardinality(self) -> int:
        """Exact number of grid actions as a Python int (may be astronomically large)."""
        return math.prod(int(n) + 1 for n in self._levels)

    def to_values(self, idx) -> np.ndarray:
        return self._low + np.asarray(idx) * self._step

    def to_index(self, values) -> np.ndarray:
        """Nearest grid index of on-grid (or nearly on-grid) values."""
        x = (np.asarray(values, dtype=np.float64) - self._low) / self._step
        return np.clip(np.floor(x + 0.5), 0, self._levels).astype(np.int64)

    def normalize(self, values) -> np.ndarray:
        """Min-max normalize action values to [0, 1] per entry."""
        return (np.asarray(values, dtype=np.float64) - self._low) / (self._high - self._low)


@dataclass(frozen=True)
class PerturbationParams:
    depth: int = 1
    epsilon: float = 1.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def validate_for(self, spec: ActionSpaceSpec):
        for step in spec.grid_step:
            ratio = self.epsilon / step
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"epsilon {self.epsilon} is not a multiple of grid step {step}")

    def steps_for(self, spec: ActionSpaceSpec) -> np.ndarray:
        """Epsilon expressed in grid steps per entry."""
        self.validate_for(spec)
        return np.rint(self.epsilon / spec.step).astype(np.int64)


@dataclass(frozen=True)
class SaParams:
    k_init_fraction: float = 0.1
    beta_init: float = 0.99
    cooling_fraction: float = 0.25
    max_iters: int = 1000
    acceptance: str = "metropolis"  # or "complement": accept with 1 - exp(...)

    def __post_init__(self):
        if not 0 < self.k_init_fraction <= 1:
            raise ValueError("k_init_fraction must lie in (0, 1]")
        if self.beta_init <= 0:
            raise ValueError("beta_init must be positive")
        if not 0 < self.cooling_fraction <= 1:
            raise ValueError("cooling_fraction must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.acceptance not in ("metropolis", "complement"):
            raise ValueError(f"unknown acceptance rule {self.acceptance!r}")


@dataclass
class Neighborhood:
    base: np.ndarray
    candidates: np.ndarray  # (C, N), row 0 is the base
    q_values: np.ndarray | None = None


# ---------------------------------------------------------------------------
# base action
# ---------------------------------------------------------------------------

def clip(x, c_min: float, c_max: float):
    return np.minimum(np.maximum(x, c_min), c_max)


def scale_to_space(a_hat, spec: ActionSpaceSpec) -> np.ndarray:
    """Clip and linearly rescale ``a_hat`` into the action box, without rounding."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.shape[-1] != spec.n_dims:
        raise ValueError(f"action has {a_hat.shape[-1]} entries, expected {spec.n_dims}")
    unit = (clip(a_hat, spec.c_min, spec.c_max) - spec.c_min) / (spec.c_max - spec.c_min)
    return unit * (spec.high - spec.low) + spec.low


def base_index(a_hat, spec: ActionSpaceSpec) -> np.ndarray:
    y = scale_to_space(a_hat, spec)
    # offsets from a_min are non-negative, so floor(x + 0.5) rounds half away from zero
    return np.clip(np.floor((y - spec.low) / spec.step + 0.5), 0, spec.max_index).astype(np.int64)


def discretize_base(a_hat, spec: ActionSpaceSpec) -> np.ndarray:
    return spec.to_values(base_index(a_hat, spec))


def minmax_map(a_hat, spec: ActionSpaceSpec) -> np.ndarray:
    return discretize_base(a_hat, spec)


# ---------------------------------------------------------------------------
# neighborhoods
# ---------------------------------------------------------------------------

def perturbation_matrix(n: int, params: PerturbationParams) -> np.ndarray:
    """N x 2dN matrix of single-entry perturbations, positive block first."""
    if n < 1:
        raise ValueError("N must be >= 1")
    d, eps = params.depth, params.epsilon
    p = np.zeros((n, 2 * d * n))
    for j in range(2 * d * n):
        i = j % n
        level = j // n + 1
        p[i, j] = eps * level if level <= d else -eps * (level - d)
    return p


def _perturbation_offsets(n: int, depth: int):
    """Entry index and signed depth multiple for every column of the perturbation matrix."""
    j = np.arange(2 * depth * n)
    level = j // n + 1
    mult = np.where(level <= depth, level, -(level - depth))
    return j % n, mult


def neighbor_indices(base_idx: np.ndarray, spec: ActionSpaceSpec, depth: int,
                     eps_steps: np.ndarray) -> np.ndarray:
    """Grid indices of the base plus its clamped, deduplicated perturbations."""
    n = base_idx.shape[0]
    entry, mult = _perturbation_offsets(n, depth)
    moved = np.clip(base_idx[entry] + mult * eps_steps[entry], 0, spec.max_index[entry])
    keep = moved != base_idx[entry]
    entry, moved = entry[keep], moved[keep]
    # a perturbed action differs from the base in one entry, so (entry, value) identifies it
    key = entry * (int(spec.max_index.max()) + 1) + moved
    _, first = np.unique(key, return_index=True)
    first.sort()
    entry, moved = entry[first], moved[first]
    out = np.repeat(base_idx[None, :], len(first) + 1, axis=0)
    out[np.arange(1, len(first) + 1), entry] = moved
    return out


def generate_neighbors(base, spec: ActionSpaceSpec, params: PerturbationParams) -> Neighborhood:
    base = np.asarray(base, dtype=np.float64)
    idx = spec.to_index(base)
    cand = neighbor_indices(idx, spec, params.depth, params.steps_for(spec))
    return Neighborhood(base=spec.to_values(idx), candidates=spec.to_values(cand))


# ---------------------------------------------------------------------------
# simulated-annealing search
# ---------------------------------------------------------------------------

def _order_best(q: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Positions sorted by descending Q, ties by lexicographic action order."""
    keys = tuple(idx[:, c] for c in range(idx.shape[1] - 1, -1, -1)) + (-q,)
    return np.lexsort(keys)


def _iteration_bound(sparams: SaParams) -> int:
    """Iterations before k cools to zero (k drops by a fixed share of k_init)."""
    return min(sparams.max_iters, math.ceil(1.0 / sparams.cooling_fraction - 1e-12))


def sa_search(state, a_hat, oracle: QOracle, spec: ActionSpaceSpec,
              pparams: PerturbationParams, sparams: SaParams,
              rng: np.random.Generator, return_q: bool = False):
    """Anneal over dynamically built neighborhoods, return the best action seen.

    ``k`` is kept as a real number that cools by ``cooling_fraction * k_init``
    per iteration; ``ceil(k)`` neighbors enter the k-best set. The search stops
    once ``k`` reaches zero or after ``max_iters`` iterations. The proposal
    ``k1`` is the best neighbor other than the current base.

    Uniform draws for acceptance tests and restarts come from a buffer of
    ``2 * iterations`` values taken from ``rng`` up front, so every call
    advances the generator by the same amount.
    """
    eps_steps = pparams.steps_for(spec)
    n = spec.n_dims
    d = pparams.depth
    cur = base_index(a_hat, spec)

    k = sparams.k_init_fraction * (2 * d * n + 1)
    c_k = sparams.cooling_fraction * k
    beta = sparams.beta_init
    c_beta = sparams.cooling_fraction * sparams.beta_init

    q_cache: dict = {}
    memory: dict = {}  # action tuple -> index array, insertion ordered

    def evaluate(cand_idx):
        keys = [tuple(row) for row in cand_idx.tolist()]
        missing = [i for i, key in enumerate(keys) if key not in q_cache]
        if missing:
            vals = np.asarray(oracle(state, spec.to_values(cand_idx[missing])), dtype=np.float64)
            if vals.shape != (len(missing),):
                raise ValueError("oracle returned a batch of the wrong shape")
            for i, v in zip(missing, vals.tolist()):
                q_cache[keys[i]] = v
        return np.array([q_cache[key] for key in keys]), keys

    draws = iter(rng.random(2 * _iteration_bound(sparams)).tolist())
    best = cur
    best_q = None
    it = 0
    while k > 0 and it < sparams.max_iters:
        it += 1
        cand = neighbor_indices(cur, spec, d, eps_steps)
        q, keys = evaluate(cand)
        q_cur = q[0]
        if best_q is None:
            best_q = q_cur
        if len(cand) == 1:
            break
        nbr_q, nbr = q[1:], cand[1:]
        order = _order_best(nbr_q, nbr)[: math.ceil(k)]
        for pos in order:
            memory.setdefault(keys[pos + 1], nbr[pos])
        k1, q1 = nbr[order[0]], nbr_q[order[0]]
        if q1 > q_cur:
            cur = k1
            if q1 > best_q:
                best, best_q = k1, q1
        else:
            p_accept = math.exp(-(q_cur - q1) / beta) if beta > 0 else 0.0
            if sparams.acceptance == "complement":
                p_accept = 1.0 - p_accept
            if next(draws) < p_accept:
                cur = k1
                beta -= c_beta
            else:
                members = list(memory.values())
                cur = members[int(next(draws) * len(members))]
        k -= c_k
    action = spec.to_values(best)
    if return_q:
        return action, best_q
    return action


# ---------------------------------------------------------------------------
# enumeration, kNN, brute force
# ---------------------------------------------------------------------------

def enumerate_action_space(spec: ActionSpaceSpec, limit: int) -> np.ndarray:
    """All grid actions in lexicographic order, shape (|A|, N)."""
    size = spec.cardinality()
    if size > limit:
        raise CardinalityExceeded(f"|A| = {size:.3g} exceeds the enumeration limit {limit}")
    axes = [np.arange(int(m) + 1) for m in spec.max_index]
    grids = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    return spec.to_values(idx)


def _lex_argmax(q: np.ndarray, actions: np.ndarray) -> int:
    ties = np.flatnonzero(q == q.max())
    if len(ties) == 1:
        return int(ties[0])
    sub = actions[ties]
    order = np.lexsort(tuple(sub[:, c] for c in range(sub.shape[1] - 1, -1, -1)))
    return int(ties[order[0]])


def brute_force_best(state, enumerated: np.ndarray, oracle: QOracle) -> np.ndarray:
    enumerated = np.asarray(enumerated, dtype=np.float64)
    if len(enumerated) == 0:
        raise ValueError("empty action list")
    q = np.asarray(oracle(state, enumerated), dtype=np.float64)
    return enumerated[_lex_argmax(q, enumerated)]


def knn_map(state, a_hat, enumerated: np.ndarray, k: int, oracle: QOracle) -> np.ndarray:
    """Best-Q action among the k grid actions nearest to ``a_hat``.

    ``a_hat`` must already be expressed in action-space coordinates (see
    ``scale_to_space``); ``enumerated`` must be in lexicographic order, which
    makes index order the distance tie-break.
    """
    enumerated = np.asarray(enumerated, dtype=np.float64)
    if len(enumerated) == 0:
        raise ValueError("empty action list")
    if not 1 <= k <= len(enumerated):
        raise ValueError(f"k={k} outside [1, {len(enumerated)}]")
    diff = enumerated - np.asarray(a_hat, dtype=np.float64)
    dist = np.einsum("ij,ij->i", diff, diff)
    if k == len(enumerated):
        chosen = np.arange(len(enumerated))
    else:
        kth = np.partition(dist, k - 1)[k - 1]
        inside = np.flatnonzero(dist < kth)
        on_edge = np.flatnonzero(dist == kth)[: k - len(inside)]
        chosen = np.sort(np.concatenate([inside, on_edge]))
    cand = enumerated[chosen]
    q = np.asarray(oracle(state, cand), dtype=np.float64)
    return cand[_lex_argmax(q, cand)]


# ---------------------------------------------------------------------------
# analysis helpers
# ---------------------------------------------------------------------------

def lipschitz_estimate(nbh: Neighborhood) -> float:
    """Smallest float L with |dQ| <= L * distance for all distinct candidate pairs."""
    if nbh.q_values is None:
        raise ValueError("neighborhood has no Q-values")
    cand = np.asarray(nbh.candidates, dtype=np.float64)
    q = np.asarray(nbh.q_values, dtype=np.float64)
    dist = np.sqrt(((cand[:, None, :] - cand[None, :, :]) ** 2).sum(axis=-1))
    distinct = dist > 0
    if not distinct.any():
        raise ValueError("need at least two distinct candidates")
    dq = np.abs(q[:, None] - q[None, :])[distinct]
    dist = dist[distinct]
    lip = float(np.max(dq / dist))
    # the rounded ratio can undershoot by an ulp; nudge until the bound holds as computed
    while np.any(dq > lip * dist):
        lip = float(np.nextafter(lip, np.inf))
    return lip


def maximally_perturbed(nbh: Neighborhood, max_distance: float, tol: float = 1e-9) -> np.ndarray:
    """Candidates at exactly ``max_distance`` from the base."""
    dist = np.linalg.norm(nbh.candidates - nbh.base, axis=1)
    return nbh.candidates[np.abs(dist - max_distance) <= tol]


# ---------------------------------------------------------------------------
# mapper objects used by the training loop
# ---------------------------------------------------------------------------

class MinMaxMapper:
    name = "minmax"
    uses_critic = False

    def __init__(self, spec: ActionSpaceSpec):
        self.spec = spec

    def __call__(self, state, a_hat, oracle, rng):
        return minmax_map(a_hat, self.spec)


class DncMapper:
    """Annealing search; MLP critic oracles run through the compiled kernel."""

    name = "dnc"
    uses_critic = True

    def __init__(self, spec: ActionSpaceSpec, pparams: PerturbationParams, sparams: SaParams,
                 compiled: bool = True):
        self.spec, self.pparams, self.sparams = spec, pparams, sparams
        self.eps_steps = pparams.steps_for(spec)
        self.compiled = compiled

    def __call__(self, state, a_hat, oracle, rng):
        if self.compiled and hasattr(oracle, "packed"):
            return self.search_packed(a_hat, oracle.packed(), rng)[0]
        return sa_search(state, a_hat, oracle, self.spec, self.pparams, self.sparams, rng)

    def search_packed(self, a_hat, packed, rng):
        from dncrl._kernels import sa_search_mlp

        spec, sp, d = self.spec, self.sparams, self.pparams.depth
        k = sp.k_init_fraction * (2 * d * spec.n_dims + 1)
        draws = rng.random(2 * _iteration_bound(sp))
        best, best_q = sa_search_mlp(
            base_index(a_hat, spec), spec.max_index, spec.low, spec.step,
            spec.high - spec.low, self.eps_steps, d, k, sp.cooling_fraction * k,
            sp.beta_init, sp.cooling_fraction * sp.beta_init, sp.max_iters,
            sp.acceptance == "complement", draws, *packed)
        return spec.to_values(best), best_q


class KnnMapper:
    name = "knn"
    uses_critic = True

    def __init__(self, spec: ActionSpaceSpec, k: int, limit: int):
        self.spec = spec
        self.enumerated = enumerate_action_space(spec, limit)
        self.k = min(k, len(self.enumerated))

    def __call__(self, state, a_hat, oracle, rng):
        return knn_map(state, scale_to_space(a_hat, self.spec), self.enumerated, self.k, oracle)
