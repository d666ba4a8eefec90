"""Finite probability spaces with partition filtrations and adapted processes.

A scenario tree stores a finite set of atoms with strictly positive
probabilities and, for each time step, a partition of the atoms.  The
partition chain must refine as time advances; conditional expectation is a
cellwise weighted average, which makes adaptedness checks and projections
exact linear operations.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


class Schedule(enum.Enum):
    """Measurability convention of a tree-indexed process.

    PRIMAL: value at time t is constant on cells of partitions[t].
    DUAL: value at index t-1 is constant on cells of partitions[t] (one step
    look-ahead), the time-s conditional mean is constant, and the terminal
    value is constant.
    """

    PRIMAL = "primal"
    DUAL = "dual"


class TreeError(ValueError):
    """Raised for malformed tree data or invalid time indices."""


@dataclass(frozen=True)
class ScenarioTree:
    """Finite probability space with a refining partition per time step.

    Parameters
    ----------
    atoms : sequence of hashable atom identifiers.
    prob : array of strictly positive weights summing to one.
    times : inclusive integer interval ``(first, last)``.
    partitions : mapping time -> list of cells, each cell a tuple of atom
        indices; cells must be disjoint and cover all atoms, and the chain
        must refine forward in time.
    noise : optional mapping stage time -> ``(n_atoms, k)`` array of the
        noise value realized on each atom at that stage.
    """

    atoms: tuple
    prob: np.ndarray
    times: tuple[int, int]
    partitions: dict[int, tuple[tuple[int, ...], ...]]
    noise: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=float)
        prob.setflags(write=False)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "atoms", tuple(self.atoms))
        first, last = self.times
        if first > last:
            raise TreeError(f"empty time range [{first}, {last}]")
        if prob.ndim != 1 or len(prob) != len(self.atoms):
            raise TreeError("prob must be a vector with one weight per atom")
        if np.any(prob <= 0):
            raise TreeError("all atom probabilities must be strictly positive")
        if abs(prob.sum() - 1.0) > PROB_TOL:
            raise TreeError(f"probabilities sum to {prob.sum()!r}, not 1")
        parts = {t: tuple(tuple(int(a) for a in cell) for cell in cells)
                 for t, cells in self.partitions.items()}
        object.__setattr__(self, "partitions", parts)
        for t in range(first, last + 1):
            if t not in parts:
                raise TreeError(f"missing partition for time {t}")
            self._check_partition(parts[t], t)
        for t in range(first, last):
            self._check_refines(parts[t + 1], parts[t], t)
        noise = {int(t): np.atleast_2d(np.asarray(w, dtype=float))
                 for t, w in self.noise.items()}
        for t, w in noise.items():
            if w.shape[0] != len(self.atoms):
                raise TreeError(f"noise at stage {t} has {w.shape[0]} rows, "
                                f"expected {len(self.atoms)}")
            w.setflags(write=False)
        object.__setattr__(self, "noise", noise)
        # atom -> cell lookup per time, used by every averaging pass
        lookup = {}
        for t in range(first, last + 1):
            idx = np.empty(len(self.atoms), dtype=int)
            for c, cell in enumerate(parts[t]):
                idx[list(cell)] = c
            lookup[t] = idx
            idx.setflags(write=False)
        object.__setattr__(self, "_cell_of", lookup)

    def _check_partition(self, cells, t):
        seen = [a for cell in cells for a in cell]
        if sorted(seen) != list(range(len(self.atoms))):
            raise TreeError(f"partition at time {t} does not partition the atoms")
        if any(len(cell) == 0 for cell in cells):
            raise TreeError(f"partition at time {t} has an empty cell")

    def _check_refines(self, fine, coarse, t):
        owner = {}
        for c, cell in enumerate(coarse):
            for a in cell:
                owner[a] = c
        for cell in fine:
            if len({owner[a] for a in cell}) != 1:
                raise TreeError(
                    f"partition at time {t + 1} does not refine time {t}")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def first_time(self) -> int:
        return self.times[0]

    @property
    def last_time(self) -> int:
        return self.times[1]

    def cells(self, t: int):
        if not self.times[0] <= t <= self.times[1]:
            raise TreeError(f"time {t} outside [{self.times[0]}, {self.times[1]}]")
        return self.partitions[t]

    def cell_of(self, t: int) -> np.ndarray:
        """Atom index -> cell index array for ``partitions[t]``."""
        self.cells(t)
        return self._cell_of[t]

    def cell_prob(self, t: int) -> np.ndarray:
        return np.array([self.prob[list(cell)].sum() for cell in self.cells(t)])

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Plain expectation of per-atom values, shape (n_atoms,) or (n_atoms, n)."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.prob, values, axes=(0, 0))


def build_tree(noise_samples, first_time: int | None = None) -> ScenarioTree:
    """Build the product tree generated by independent per-stage noise samples.

    Parameters
    ----------
    noise_samples : mapping stage time -> list of ``(value, weight)`` pairs.
        Values may be scalars or vectors; weights at every stage must sum to
        one (rejected otherwise, never renormalized).
    first_time : first time of the tree; defaults to the earliest stage.
        Stages strictly before ``first_time`` act as initial information.

    Returns
    -------
    ScenarioTree with one atom per noise path, times
    ``[first_time, last_stage + 1]``, and ``partitions[t]`` grouping atoms
    that share the noise prefix on stages before ``t``.
    """

    stages = sorted(int(t) for t in noise_samples)
    if not stages:
        raise TreeError("no noise stages supplied")
    per_stage = []
    for t in stages:
        samples = list(noise_samples[t])
        if not samples:
            raise TreeError(f"stage {t} has no samples")
        weights = np.array([float(w) for _, w in samples])
        if np.any(weights <= 0):
            raise TreeError(f"stage {t} has a nonpositive weight")
        if abs(weights.sum() - 1.0) > PROB_TOL:
            raise TreeError(
                f"stage {t} weights sum to {weights.sum()!r}, not 1")
        values = [np.atleast_1d(np.asarray(v, dtype=float)) for v, _ in samples]
        per_stage.append((t, values, weights))

    tau = stages[0] if first_time is None else int(first_time)
    T = stages[-1] + 1
    if not stages[0] <= tau <= T:
        raise TreeError(f"first_time {tau} incompatible with stages {stages}")

    paths = list(itertools.product(*(range(len(v)) for _, v, _ in per_stage)))
    prob = np.array([
        float(np.prod([w[i] for (_, _, w), i in zip(per_stage, path)]))
        for path in paths
    ])
    # exact unit mass; product rounding stays well inside PROB_TOL
    partitions = {}
    for t in range(tau, T + 1):
        visible = [k for k, (st, _, _) in enumerate(per_stage) if st < t]
        groups: dict[tuple, list[int]] = {}
        for a, path in enumerate(paths):
            key = tuple(path[k] for k in visible)
            groups.setdefault(key, []).append(a)
        partitions[t] = tuple(tuple(g) for _, g in sorted(groups.items()))
    noise = {
        st: np.stack([vals[path[k]] for path in paths])
        for k, (st, vals, _) in enumerate(per_stage)
    }
    return ScenarioTree(atoms=tuple(paths), prob=prob, times=(tau, T),
                        partitions=partitions, noise=noise)


def cond_expect(tree: ScenarioTree, values: np.ndarray, t: int) -> np.ndarray:
    """Conditional expectation given the time-``t`` partition.

    Averages ``values`` over each cell with the cell's probability weights and
    broadcasts the mean back to the atoms.  Idempotent and linear; the plain
    expectation is preserved (tower property).
    """

    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for cell in tree.cells(t):
        idx = list(cell)
        w = tree.prob[idx]
        out[idx] = np.tensordot(w, values[idx], axes=(0, 0)) / w.sum()
    return out


def expect_pair(tree: ScenarioTree, y, x) -> float:
    """Duality pairing E[sum_t y_t . x_t] of two tree-indexed value stacks.

    ``y`` and ``x`` are arrays of shape ``(n_times, n_atoms, n)`` (or anything
    broadcasting to a common such shape).
    """

    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise TreeError(f"shape mismatch {y.shape} vs {x.shape}")
    per_atom = np.einsum("tak,tak->a", np.atleast_3d(y), np.atleast_3d(x))
    return float(tree.prob @ per_atom)


@dataclass(frozen=True)
class AdaptednessReport:
    ok: bool
    max_spread: float
    worst: tuple | None = None  # (label, time, cell index)


@dataclass(frozen=True)
class AdaptedProcess:
    """Tree-indexed R^n-valued process on a time window.

    ``values[k]`` holds the per-atom values at time ``window[0] + k``.
    Increments are derived, never stored.  The measurability schedule is
    explicit; use :func:`check_adapted` to verify it.
    """

    tree: ScenarioTree
    dim: int
    window: tuple[int, int]
    values: np.ndarray
    schedule: Schedule = Schedule.PRIMAL

    def __post_init__(self):
        s, T = self.window
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        expected = (T - s + 1, self.tree.n_atoms, self.dim)
        if values.shape != expected:
            raise TreeError(f"values shape {values.shape}, expected {expected}")
        if not (self.tree.first_time <= s <= T <= self.tree.last_time):
            raise TreeError(f"window {self.window} outside tree times {self.tree.times}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value(self, t: int) -> np.ndarray:
        s, T = self.window
        if not s <= t <= T:
            raise TreeError(f"time {t} outside window {self.window}")
        return self.values[t - s]

    def delta(self, t: int) -> np.ndarray:
        """Increment value(t) - value(t-1)."""
        return self.value(t) - self.value(t - 1)

    def expect(self, t: int) -> np.ndarray:
        return self.tree.expect(self.value(t))


def _cell_spread(tree, vals, t):
    """Max infinity-norm spread of per-atom values inside time-t cells."""
    worst = 0.0
    worst_cell = None
    for c, cell in enumerate(tree.cells(t)):
        block = vals[list(cell)]
        spread = float(np.max(block.max(axis=0) - block.min(axis=0))) if len(cell) > 1 else 0.0
        if spread > worst:
            worst, worst_cell = spread, c
    return worst, worst_cell


def check_adapted(process: AdaptedProcess, schedule: Schedule | None = None,
                  tol: float = 1e-9) -> AdaptednessReport:
    """Report-style measurability check under the primal or dual schedule.

    Primal: value at t constant per cell of ``partitions[t]`` for every t in
    the window.  Dual: value at index t-1 constant per cell of
    ``partitions[t]`` for t in ``[s+1, T]``, the conditional mean of the
    time-s value given ``partitions[s]`` constant across atoms, and the
    terminal value constant across atoms.
    """

    schedule = schedule or process.schedule
    tree = process.tree
    s, T = process.window
    worst = 0.0
    where = None

    def track(spread, label, t, cell):
        nonlocal worst, where
        if spread > worst:
            worst, where = spread, (label, t, cell)

    if schedule is Schedule.PRIMAL:
        for t in range(s, T + 1):
            spread, cell = _cell_spread(tree, process.value(t), t)
            track(spread, "cell", t, cell)
    else:
        for t in range(s + 1, T + 1):
            spread, cell = _cell_spread(tree, process.value(t - 1), t)
            track(spread, "cell", t, cell)
        cond_s = cond_expect(tree, process.value(s), s)
        spread = float(np.max(cond_s.max(axis=0) - cond_s.min(axis=0)))
        track(spread, "conditional-mean", s, None)
        vT = process.value(T)
        spread = float(np.max(vT.max(axis=0) - vT.min(axis=0)))
        track(spread, "terminal", T, None)
    return AdaptednessReport(ok=worst <= tol, max_spread=worst, worst=where)


def project_adapted(tree: ScenarioTree, stack: np.ndarray, first: int) -> np.ndarray:
    """Project a value stack onto the primal adapted subspace (cellwise means).

    ``stack`` has shape ``(n_times, n_atoms, n)`` with row k at time
    ``first + k``.  Orthogonal projection in the probability-weighted inner
    product.
    """

    out = np.empty_like(np.asarray(stack, dtype=float))
    for k in range(stack.shape[0]):
        out[k] = cond_expect(tree, stack[k], first + k)
    return out
