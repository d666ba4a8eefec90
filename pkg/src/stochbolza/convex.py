"""Extended-real structured convex functions.

The working family is ``f(z) = z'Qz + b.z + c + indicator(D)`` with Q
symmetric positive semidefinite (no 1/2 factor on the quadratic) and D a
box, affine set, polyhedron, or intersection of these.  Evaluation,
subgradients and proximal maps are exact on the family; Fenchel conjugates
are closed-form where the family is closed under conjugation (quadratic
plus affine domains) and otherwise computed by a certified inner
maximization.  Conjugate functions, pre-compositions with signed
permutations, and partial minimizations are exposed as function objects so
that dual stage costs inherit exact proximal maps through the Moreau
identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

INF = math.inf
FEAS_TOL = 1e-9          # domain membership tolerance used by evaluation
PSD_TOL = 1e-10          # allowed negative eigenvalue slack on Q
STATIONARITY_TOL = 1e-9  # certificate for numeric inner maximizations
RANGE_TOL = 1e-9         # relative tolerance for range-membership tests


class ConvexityError(ValueError):
    """Raised for data outside the supported convex family."""


class EvaluationError(ValueError):
    """Raised when an operation is requested at a point where it is undefined."""


# ---------------------------------------------------------------------------
# set descriptors


class SetDescriptor:
    """Base class for the supported constraint sets."""

    dim: int

    def violation(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def violation_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.array([self.violation(z) for z in Z])

    def contains(self, z, tol: float = FEAS_TOL) -> bool:
        return self.violation(np.asarray(z, dtype=float)) <= tol

    def rows(self):
        """Compile to equality and inequality rows (A_eq, b_eq, G, h)."""
        raise NotImplementedError

    def feasible_point(self) -> np.ndarray:
        raise NotImplementedError

    def section(self, fixed_idx, fixed_vals, free_idx):
        """Descriptor over the free coordinates with the others pinned.

        Returns None when the section is empty.
        """
        raise NotImplementedError

    def transform(self, S: np.ndarray):
        """Descriptor of {z : S z in this set} for an invertible matrix S."""
        raise NotImplementedError


class AllSpace(SetDescriptor):
    def __init__(self, dim: int):
        self.dim = int(dim)

    def violation(self, z):
        return 0.0

    def violation_batch(self, Z):
        return np.zeros(len(Z))

    def rows(self):
        z = np.zeros((0, self.dim))
        return z, np.zeros(0), z.copy(), np.zeros(0)

    def feasible_point(self):
        return np.zeros(self.dim)

    def section(self, fixed_idx, fixed_vals, free_idx):
        return AllSpace(len(free_idx))

    def transform(self, S):
        return AllSpace(S.shape[1])


class Box(SetDescriptor):
    """Coordinate bounds ``lower <= z <= upper`` with +-inf allowed."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ConvexityError("box bounds must be equal-length vectors")
        if np.any(self.lower > self.upper):
            raise ConvexityError("box has lower > upper")
        self.dim = len(self.lower)

    def violation(self, z):
        z = np.asarray(z, dtype=float)
        lo = np.where(np.isfinite(self.lower), self.lower - z, -INF)
        hi = np.where(np.isfinite(self.upper), z - self.upper, -INF)
        return max(0.0, float(np.max(np.maximum(lo, hi), initial=-INF)))

    def violation_batch(self, Z):
        lo = np.where(np.isfinite(self.lower), self.lower - Z, -INF)
        hi = np.where(np.isfinite(self.upper), Z - self.upper, -INF)
        v = np.maximum(lo, hi).max(axis=1, initial=-INF)
        return np.maximum(v, 0.0)

    def rows(self):
        rows, rhs = [], []
        for i in range(self.dim):
            if np.isfinite(self.upper[i]):
                e = np.zeros(self.dim)
                e[i] = 1.0
                rows.append(e)
                rhs.append(self.upper[i])
            if np.isfinite(self.lower[i]):
                e = np.zeros(self.dim)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-self.lower[i])
        G = np.array(rows) if rows else np.zeros((0, self.dim))
        return np.zeros((0, self.dim)), np.zeros(0), G, np.array(rhs)

    def feasible_point(self):
        return np.clip(0.0, self.lower, self.upper)

    def project(self, z):
        return np.clip(z, self.lower, self.upper)

    def section(self, fixed_idx, fixed_vals, free_idx):
        fixed_idx = list(fixed_idx)
        if fixed_idx:
            lo = self.lower[fixed_idx]
            hi = self.upper[fixed_idx]
            if np.any(fixed_vals < lo - FEAS_TOL) or np.any(fixed_vals > hi + FEAS_TOL):
                return None
        return Box(self.lower[list(free_idx)], self.upper[list(free_idx)])

    def transform(self, S):
        if _is_signed_permutation(S):
            # z with Sz in box: permuted/sign-flipped box
            lower = np.full(S.shape[1], -INF)
            upper = np.full(S.shape[1], INF)
            for i in range(S.shape[0]):
                j = int(np.argmax(np.abs(S[i])))
                s = S[i, j]
                if s > 0:
                    lower[j], upper[j] = self.lower[i], self.upper[i]
                else:
                    lower[j], upper[j] = -self.upper[i], -self.lower[i]
            return Box(lower, upper)
        A_eq, b_eq, G, h = self.rows()
        return Polyhedron(G @ S, h)


class AffineSet(SetDescriptor):
    """Solution set of ``A z = b``; consistency is validated on construction."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.A.shape[0] != len(self.b):
            raise ConvexityError("affine rows and rhs length differ")
        self.dim = self.A.shape[1]
        self._point, res, *_ = np.linalg.lstsq(self.A, self.b, rcond=None)
        if np.linalg.norm(self.A @ self._point - self.b) > 1e-9 * (1 + np.linalg.norm(self.b)):
            raise ConvexityError("inconsistent affine system")

    def violation(self, z):
        return float(np.max(np.abs(self.A @ np.asarray(z, dtype=float) - self.b), initial=0.0))

    def violation_batch(self, Z):
        if self.A.shape[0] == 0:
            return np.zeros(len(Z))
        return np.abs(Z @ self.A.T - self.b).max(axis=1)

    def rows(self):
        return self.A, self.b, np.zeros((0, self.dim)), np.zeros(0)

    def feasible_point(self):
        return self._point.copy()

    def nullspace(self):
        return scipy.linalg.null_space(self.A)

    def project(self, z):
        corr, *_ = np.linalg.lstsq(self.A, self.A @ z - self.b, rcond=None)
        return z - corr

    def section(self, fixed_idx, fixed_vals, free_idx):
        fixed_idx, free_idx = list(fixed_idx), list(free_idx)
        b = self.b - (self.A[:, fixed_idx] @ fixed_vals if fixed_idx else 0.0)
        A = self.A[:, free_idx]
        try:
            return AffineSet(A, b)
        except ConvexityError:
            return None

    def transform(self, S):
        return AffineSet(self.A @ S, self.b)


class Polyhedron(SetDescriptor):
    """Inequality system ``A z <= b``."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.A.shape[0] != len(self.b):
            raise ConvexityError("polyhedron rows and rhs length differ")
        self.dim = self.A.shape[1]

    def violation(self, z):
        if self.A.shape[0] == 0:
            return 0.0
        return max(0.0, float(np.max(self.A @ np.asarray(z, dtype=float) - self.b)))

    def violation_batch(self, Z):
        if self.A.shape[0] == 0:
            return np.zeros(len(Z))
        return np.maximum((Z @ self.A.T - self.b).max(axis=1), 0.0)

    def rows(self):
        return np.zeros((0, self.dim)), np.zeros(0), self.A, self.b

    def feasible_point(self):
        if self.violation(np.zeros(self.dim)) == 0.0:
            return np.zeros(self.dim)
        from scipy.optimize import linprog
        res = linprog(np.zeros(self.dim), A_ub=self.A, b_ub=self.b,
                      bounds=[(None, None)] * self.dim, method="highs")
        if not res.success:
            raise ConvexityError("empty polyhedron")
        return res.x

    def section(self, fixed_idx, fixed_vals, free_idx):
        fixed_idx, free_idx = list(fixed_idx), list(free_idx)
        b = self.b - (self.A[:, fixed_idx] @ fixed_vals if fixed_idx else 0.0)
        A = self.A[:, free_idx]
        sec = Polyhedron(A, b)
        # rows with no free coefficient must already hold
        fixed_only = np.all(np.abs(A) < 1e-14, axis=1)
        if np.any(b[fixed_only] < -FEAS_TOL):
            return None
        return sec

    def transform(self, S):
        return Polyhedron(self.A @ S, self.b)


class Intersection(SetDescriptor):
    def __init__(self, parts):
        self.parts = tuple(parts)
        if not self.parts:
            raise ConvexityError("empty intersection list")
        dims = {p.dim for p in self.parts}
        if len(dims) != 1:
            raise ConvexityError("intersection parts disagree on dimension")
        self.dim = dims.pop()

    def violation(self, z):
        return max(p.violation(z) for p in self.parts)

    def violation_batch(self, Z):
        out = np.zeros(len(Z))
        for p in self.parts:
            out = np.maximum(out, p.violation_batch(Z))
        return out

    def rows(self):
        eqs, beqs, ineqs, hs = [], [], [], []
        for p in self.parts:
            A_eq, b_eq, G, h = p.rows()
            eqs.append(A_eq)
            beqs.append(b_eq)
            ineqs.append(G)
            hs.append(h)
        return (np.vstack(eqs), np.concatenate(beqs),
                np.vstack(ineqs), np.concatenate(hs))

    def feasible_point(self):
        A_eq, b_eq, G, h = self.rows()
        from scipy.optimize import linprog
        res = linprog(np.zeros(self.dim),
                      A_ub=G if len(G) else None, b_ub=h if len(G) else None,
                      A_eq=A_eq if len(A_eq) else None,
                      b_eq=b_eq if len(A_eq) else None,
                      bounds=[(None, None)] * self.dim, method="highs")
        if not res.success:
            raise ConvexityError("empty intersection")
        return res.x

    def section(self, fixed_idx, fixed_vals, free_idx):
        secs = []
        for p in self.parts:
            s = p.section(fixed_idx, fixed_vals, free_idx)
            if s is None:
                return None
            secs.append(s)
        return Intersection(secs)

    def transform(self, S):
        return Intersection([p.transform(S) for p in self.parts])


def _is_signed_permutation(S):
    if S.shape[0] != S.shape[1]:
        return False
    absS = np.abs(S)
    return (np.all(np.isin(absS, (0.0, 1.0)))
            and np.all(absS.sum(axis=0) == 1) and np.all(absS.sum(axis=1) == 1))


def box(lower, upper) -> Box:
    return Box(np.atleast_1d(lower).astype(float), np.atleast_1d(upper).astype(float))


def singleton(point) -> AffineSet:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return AffineSet(np.eye(len(point)), point)


# ---------------------------------------------------------------------------
# strongly convex QP core: min 1/2 x'Hx - r.x subject to compiled rows


def solve_qp(H, r, A_eq, b_eq, G, h, tol: float = 1e-12, max_sweeps: int = 20000):
    """Solve a small strongly convex QP.

    H must be positive definite.  Box-structured inequality rows (single
    signed unit entries) are solved exactly by active-face enumeration;
    general rows fall back to dual Gauss-Seidel (Hildreth) with equality
    multipliers unconstrained.  Returns ``(x, kkt_residual)``.
    """

    n_eq, n_in = len(b_eq), len(h)
    cho = scipy.linalg.cho_factor(H)
    x_free = scipy.linalg.cho_solve(cho, r)
    if n_eq == 0 and n_in == 0:
        return x_free, 0.0
    if n_in == 0:
        K = np.block([[H, A_eq.T], [A_eq, np.zeros((n_eq, n_eq))]])
        rhs = np.concatenate([r, b_eq])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        x = sol[:len(r)]
        return x, float(np.max(np.abs(A_eq @ x - b_eq), initial=0.0))
    box = _box_rows(G, h, len(r))
    if box is not None:
        out = _solve_qp_box_enum(H, r, A_eq, b_eq, *box)
        if out is not None:
            return out

    C = np.vstack([A_eq, G]) if n_eq else G
    d = np.concatenate([b_eq, h]) if n_eq else h
    m = n_eq + n_in
    Hinv_Ct = scipy.linalg.cho_solve(cho, C.T)       # n x m
    M = C @ Hinv_Ct                                  # dual metric
    diag = np.maximum(np.diag(M), 1e-300)
    lam = np.zeros(m)
    x = x_free.copy()
    scale = 1.0 + float(np.max(np.abs(d), initial=0.0)) + float(np.linalg.norm(x_free))
    for _ in range(max_sweeps):
        delta_max = 0.0
        for i in range(m):
            g_i = C[i] @ x - d[i]
            step = g_i / diag[i]
            new = lam[i] + step if i < n_eq else max(0.0, lam[i] + step)
            dlt = new - lam[i]
            if dlt != 0.0:
                lam[i] = new
                x -= Hinv_Ct[:, i] * dlt
                delta_max = max(delta_max, abs(dlt))
        if delta_max <= tol * scale:
            break
    viol = C @ x - d
    primal = float(np.max(np.concatenate([
        np.abs(viol[:n_eq]), np.maximum(viol[n_eq:], 0.0)]), initial=0.0))
    return x, primal


def _box_rows(G, h, d):
    """Recognize inequality rows as coordinate bounds; returns (lo, hi) or None."""
    if G.shape[0] == 0:
        return None
    lo = np.full(d, -INF)
    hi = np.full(d, INF)
    for row, rhs in zip(G, h):
        nz = np.flatnonzero(row)
        if len(nz) != 1 or abs(abs(row[nz[0]]) - 1.0) > 1e-14:
            return None
        i = nz[0]
        if row[i] > 0:
            hi[i] = min(hi[i], rhs)
        else:
            lo[i] = max(lo[i], -rhs)
    if np.any(lo > hi):
        return None
    bounded = np.flatnonzero(np.isfinite(lo) | np.isfinite(hi))
    if len(bounded) > 6:
        return None
    return lo, hi, bounded


def _solve_qp_box_enum(H, r, A_eq, b_eq, lo, hi, bounded):
    """Exact active-face enumeration for box-bounded strongly convex QPs."""
    import itertools as _it

    d = len(r)
    n_eq = len(b_eq)
    options = []
    for i in bounded:
        opts = [("free", i, 0.0)]
        if np.isfinite(lo[i]):
            opts.append(("lo", i, lo[i]))
        if np.isfinite(hi[i]):
            opts.append(("hi", i, hi[i]))
        options.append(opts)
    tol = 1e-10
    for pattern in _it.product(*options):
        pinned = {i: (side, val) for side, i, val in pattern if side != "free"}
        free = [i for i in range(d) if i not in pinned]
        z = np.zeros(d)
        for i, (_, val) in pinned.items():
            z[i] = val
        if free:
            Hff = H[np.ix_(free, free)]
            rhs_f = r[free] - H[np.ix_(free, list(pinned))] @ \
                np.array([v for _, v in pinned.values()]) if pinned else r[free]
            if n_eq:
                Af = A_eq[:, free]
                bf = b_eq - (A_eq[:, list(pinned)] @
                             np.array([v for _, v in pinned.values()]) if pinned else 0.0)
                K = np.block([[Hff, Af.T], [Af, np.zeros((n_eq, n_eq))]])
                try:
                    sol = np.linalg.solve(K, np.concatenate([rhs_f, bf]))
                except np.linalg.LinAlgError:
                    sol, *_ = np.linalg.lstsq(K, np.concatenate([rhs_f, bf]), rcond=None)
                z[free] = sol[:len(free)]
                mu = sol[len(free):]
            else:
                try:
                    z[free] = np.linalg.solve(Hff, rhs_f)
                except np.linalg.LinAlgError:
                    continue
                mu = np.zeros(0)
        else:
            if n_eq:
                if np.max(np.abs(A_eq @ z - b_eq), initial=0.0) > 1e-8:
                    continue
                mu, *_ = np.linalg.lstsq(A_eq.T, -(H @ z - r), rcond=None)
            else:
                mu = np.zeros(0)
        # primal feasibility on the free coordinates
        ok = True
        for i in bounded:
            if i in pinned:
                continue
            if z[i] < lo[i] - tol or z[i] > hi[i] + tol:
                ok = False
                break
        if not ok:
            continue
        if n_eq and np.max(np.abs(A_eq @ z - b_eq), initial=0.0) > 1e-7 * (1 + np.abs(b_eq).max(initial=0.0)):
            continue
        # dual signs on the pinned coordinates
        grad = H @ z - r + (A_eq.T @ mu if n_eq else 0.0)
        scale = tol * (1.0 + float(np.max(np.abs(grad), initial=0.0)))
        for i, (side, _) in pinned.items():
            if side == "hi" and grad[i] > scale:
                ok = False
                break
            if side == "lo" and grad[i] < -scale:
                ok = False
                break
        for i in free:
            if abs(grad[i]) > 1e-7 * (1.0 + np.abs(grad).max()):
                ok = False
                break
        if ok:
            feas = (np.max(np.abs(A_eq @ z - b_eq), initial=0.0) if n_eq else 0.0)
            return z, float(feas)
    return None


def _project_descriptor(dom: SetDescriptor, z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto a descriptor."""
    if isinstance(dom, AllSpace):
        return np.asarray(z, dtype=float)
    if isinstance(dom, Box):
        return dom.project(z)
    if isinstance(dom, AffineSet):
        return dom.project(z)
    A_eq, b_eq, G, h = dom.rows()
    x, _ = solve_qp(np.eye(dom.dim), np.asarray(z, dtype=float), A_eq, b_eq, G, h)
    return x


# ---------------------------------------------------------------------------
# structured convex functions


class ConjugateResult(NamedTuple):
    value: float
    argmax: np.ndarray | None
    unbounded: bool = False


class SubgradResult(NamedTuple):
    value: float
    subgrad: np.ndarray | None
    active: tuple = ()


@dataclass(frozen=True)
class StructuredConvex:
    """Quadratic-plus-indicator convex function ``z'Qz + b.z + c + delta_D``.

    The quadratic convention carries no 1/2 factor.  Q must be symmetric PSD
    (eigenvalues above ``-PSD_TOL``); the domain must be nonempty so the
    function is proper.
    """

    dim: int
    quad: np.ndarray
    lin: np.ndarray
    const: float
    domain: SetDescriptor

    def __post_init__(self):
        Q = np.asarray(self.quad, dtype=float).reshape(self.dim, self.dim)
        Q = 0.5 * (Q + Q.T)
        w = np.linalg.eigvalsh(Q) if self.dim else np.zeros(0)
        if self.dim and w.min() < -PSD_TOL * max(1.0, abs(w).max()):
            raise ConvexityError(f"quadratic part not PSD (min eig {w.min():.3e})")
        Q.setflags(write=False)
        lin = np.asarray(self.lin, dtype=float).reshape(self.dim).copy()
        lin.setflags(write=False)
        object.__setattr__(self, "quad", Q)
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "const", float(self.const))
        if self.domain.dim != self.dim:
            raise ConvexityError("domain dimension mismatch")
        self.domain.feasible_point()  # raises when empty: function stays proper

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def quadratic(Q, b=None, c=0.0, domain=None) -> "StructuredConvex":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        d = Q.shape[0]
        return StructuredConvex(d, Q, np.zeros(d) if b is None else b, c,
                                domain or AllSpace(d))

    @staticmethod
    def indicator(domain: SetDescriptor) -> "StructuredConvex":
        d = domain.dim
        return StructuredConvex(d, np.zeros((d, d)), np.zeros(d), 0.0, domain)

    @staticmethod
    def zero(dim: int) -> "StructuredConvex":
        return StructuredConvex.indicator(AllSpace(dim))

    # -- evaluation ------------------------------------------------------------

    def value(self, z, feastol: float = FEAS_TOL) -> float:
        z = np.asarray(z, dtype=float).reshape(self.dim)
        if self.domain.violation(z) > feastol:
            return INF
        return float(z @ self.quad @ z + self.lin @ z + self.const)

    def value_batch(self, Z, feastol: float = FEAS_TOL) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.dim)
        vals = np.einsum("ij,jk,ik->i", Z, self.quad, Z) + Z @ self.lin + self.const
        vals = np.where(self.domain.violation_batch(Z) > feastol, INF, vals)
        return vals

    def eval_subgrad(self, z, feastol: float = FEAS_TOL) -> SubgradResult:
        """Value and one subgradient sample (smooth part plus the zero
        normal-cone element); active faces are reported separately."""
        z = np.asarray(z, dtype=float).reshape(self.dim)
        val = self.value(z, feastol)
        if val == INF:
            return SubgradResult(INF, None, ())
        grad = 2.0 * self.quad @ z + self.lin
        return SubgradResult(val, grad, tuple(self._active(z, feastol)))

    def _active(self, z, tol):
        out = []
        def walk(dom):
            if isinstance(dom, Box):
                for i in range(dom.dim):
                    if np.isfinite(dom.lower[i]) and z[i] <= dom.lower[i] + tol:
                        out.append(("box-lower", i))
                    if np.isfinite(dom.upper[i]) and z[i] >= dom.upper[i] - tol:
                        out.append(("box-upper", i))
            elif isinstance(dom, AffineSet):
                if dom.A.shape[0]:
                    out.append(("affine", dom.A.shape[0]))
            elif isinstance(dom, Polyhedron):
                if dom.A.shape[0]:
                    slack = dom.A @ z - dom.b
                    for i in np.flatnonzero(slack >= -tol):
                        out.append(("poly", int(i)))
            elif isinstance(dom, Intersection):
                for p in dom.parts:
                    walk(p)
        walk(self.domain)
        return out

    # -- proximal map ----------------------------------------------------------

    def prox(self, z, step: float) -> np.ndarray:
        """argmin_w f(w) + ||w - z||^2 / (2 step); exact on the family."""
        if step <= 0:
            raise EvaluationError("prox step must be positive")
        z = np.asarray(z, dtype=float).reshape(self.dim)
        H = 2.0 * self.quad + np.eye(self.dim) / step
        r = z / step - self.lin
        dom = self.domain
        if isinstance(dom, AllSpace):
            return np.linalg.solve(H, r)
        if isinstance(dom, Box) and _is_diagonal(self.quad):
            q = np.diag(self.quad)
            w = (z / step - self.lin) / (2.0 * q + 1.0 / step)
            return np.clip(w, dom.lower, dom.upper)
        A_eq, b_eq, G, h = dom.rows()
        x, _ = solve_qp(H, r, A_eq, b_eq, G, h)
        return x

    def prox_partial(self, z_kept, step: float, kept_idx, elim_idx):
        """Joint minimizer of f over all coordinates with the proximal penalty
        applied to the kept block only; used by partial-minimization views."""
        kept_idx, elim_idx = list(kept_idx), list(elim_idx)
        z_kept = np.asarray(z_kept, dtype=float).reshape(len(kept_idx))
        H = 2.0 * self.quad.copy()
        r = -self.lin.copy()
        for pos, i in enumerate(kept_idx):
            H[i, i] += 1.0 / step
            r[i] += z_kept[pos] / step
        # coercivity on the eliminated block may need a whisker of Tikhonov
        w = np.linalg.eigvalsh(H)
        if w.min() <= 1e-12 * max(1.0, w.max()):
            for i in elim_idx:
                H[i, i] += 1e-10
        A_eq, b_eq, G, h = self.domain.rows()
        x, _ = solve_qp(H, r, A_eq, b_eq, G, h)
        return x[kept_idx], x[elim_idx]

    # -- conjugate -------------------------------------------------------------

    def conjugate_value(self, y) -> ConjugateResult:
        """sup_z { y.z - f(z) } with attaining point when finite.

        Closed form for full-space, affine, and separable quadratic-box
        instances; certified numeric maximization otherwise (projected
        stationarity below ``STATIONARITY_TOL``).  The reported value is
        always attained by the returned feasible point, so it never
        overestimates the conjugate.
        """
        y = np.asarray(y, dtype=float).reshape(self.dim)
        a = y - self.lin
        res = _max_quad_over(self.quad, a, self.domain)
        if res.unbounded:
            return ConjugateResult(INF, None, True)
        return ConjugateResult(res.value - self.const, res.argmax, False)

    def conjugate(self) -> "ConvexFunctionLike":
        """The conjugate as a function object (closed form when available)."""
        closed = _closed_conjugate(self)
        return closed if closed is not None else ConjugateView(self)

    # -- algebra ---------------------------------------------------------------

    def precompose_signed_perm(self, S) -> "StructuredConvex":
        """f(S z) for a signed permutation S (exact family member)."""
        S = np.asarray(S, dtype=float)
        return StructuredConvex(self.dim, S.T @ self.quad @ S, S.T @ self.lin,
                                self.const, self.domain.transform(S))

    def add_linear(self, vec, const: float = 0.0) -> "StructuredConvex":
        return StructuredConvex(self.dim, self.quad, self.lin + np.asarray(vec, dtype=float),
                                self.const + const, self.domain)

    def section(self, fixed_idx, fixed_vals, free_idx) -> "StructuredConvex | None":
        """Restriction to the free coordinates with the fixed ones pinned.

        Returns None when the section of the domain is empty.
        """
        fixed_idx, free_idx = list(fixed_idx), list(free_idx)
        fixed_vals = np.asarray(fixed_vals, dtype=float).reshape(len(fixed_idx))
        dom = self.domain.section(fixed_idx, fixed_vals, free_idx)
        if dom is None:
            return None
        Qff = self.quad[np.ix_(free_idx, free_idx)]
        cross = self.quad[np.ix_(free_idx, fixed_idx)] @ fixed_vals
        lin = self.lin[free_idx] + 2.0 * cross
        const = (self.const + fixed_vals @ self.quad[np.ix_(fixed_idx, fixed_idx)] @ fixed_vals
                 + self.lin[fixed_idx] @ fixed_vals)
        try:
            return StructuredConvex(len(free_idx), Qff, lin, const, dom)
        except ConvexityError:
            return None


def _is_diagonal(Q):
    return np.all(np.abs(Q - np.diag(np.diag(Q))) < 1e-15 * max(1.0, np.abs(Q).max()))


class _MaxResult(NamedTuple):
    value: float
    argmax: np.ndarray | None
    unbounded: bool


def _max_quad_over(Q, a, dom) -> _MaxResult:
    """sup over dom of a.z - z'Qz (concave).  Never overestimates."""
    d = len(a)
    if isinstance(dom, AllSpace):
        return _max_quad_free(Q, a)
    if isinstance(dom, AffineSet):
        z0 = dom.feasible_point()
        N = dom.nullspace()
        if N.shape[1] == 0:
            return _MaxResult(float(a @ z0 - z0 @ Q @ z0), z0, False)
        red = _max_quad_free(N.T @ Q @ N, N.T @ (a - 2.0 * Q @ z0))
        if red.unbounded:
            return _MaxResult(INF, None, True)
        z = z0 + N @ red.argmax
        return _MaxResult(float(a @ z - z @ Q @ z), z, False)
    if isinstance(dom, Box) and _is_diagonal(Q):
        q = np.diag(Q)
        z = np.empty(d)
        for i in range(d):
            lo, hi, qi, ai = dom.lower[i], dom.upper[i], q[i], a[i]
            if qi > 0:
                z[i] = np.clip(ai / (2.0 * qi), lo, hi)
            elif ai > 0:
                if not np.isfinite(hi):
                    return _MaxResult(INF, None, True)
                z[i] = hi
            elif ai < 0:
                if not np.isfinite(lo):
                    return _MaxResult(INF, None, True)
                z[i] = lo
            else:
                z[i] = min(max(0.0, lo), hi)
        return _MaxResult(float(a @ z - z @ Q @ z), z, False)
    # general domain: minimize the convex negation with the QP core
    A_eq, b_eq, G, h = dom.rows()
    H = 2.0 * Q
    wmin = np.linalg.eigvalsh(H).min() if d else 0.0
    reg = 0.0
    if wmin <= 1e-12:
        reg = 1e-10 * max(1.0, np.abs(H).max())
        H = H + reg * np.eye(d)
    z, _ = solve_qp(H, a, A_eq, b_eq, G, h)
    if np.linalg.norm(z) > 1e8:
        return _MaxResult(INF, None, True)
    # polish with exact stationarity on the regularized face, then certify
    grad = a - 2.0 * Q @ z
    proj_grad = _projected_gradient_norm(grad, z, dom)
    if proj_grad > STATIONARITY_TOL * (1.0 + np.linalg.norm(a)) and reg:
        # escape along the unpenalized flat direction until blocked
        z2, _ = solve_qp(H + 9e-9 * np.eye(d), a, A_eq, b_eq, G, h)
        if a @ z2 - z2 @ Q @ z2 > a @ z - z @ Q @ z:
            z = z2
    return _MaxResult(float(a @ z - z @ Q @ z), z, False)


def _max_quad_free(Q, a) -> _MaxResult:
    d = len(a)
    if d == 0:
        return _MaxResult(0.0, np.zeros(0), False)
    w, V = np.linalg.eigh(Q)
    thresh = max(1e-300, RANGE_TOL * max(1.0, w.max(initial=0.0)))
    pos = w > thresh
    coeff = V.T @ a
    scale = 1.0 + float(np.linalg.norm(a))
    if np.any(np.abs(coeff[~pos]) > RANGE_TOL * scale):
        return _MaxResult(INF, None, True)
    z = V[:, pos] @ (coeff[pos] / (2.0 * w[pos]))
    return _MaxResult(float(a @ z - z @ Q @ z), z, False)


def _projected_gradient_norm(grad, z, dom):
    """Norm of the gradient projected on the locally feasible directions."""
    step = 1e-6 / max(1.0, np.linalg.norm(grad))
    moved = _project_descriptor(dom, z + step * grad)
    return float(np.linalg.norm(moved - z) / step)


def _closed_conjugate(f: StructuredConvex):
    """Closed-form conjugate for quadratic functions over affine domains."""
    dom = f.domain
    if isinstance(dom, AllSpace):
        z0 = np.zeros(f.dim)
        N = np.eye(f.dim)
    elif isinstance(dom, AffineSet):
        z0 = dom.feasible_point()
        N = dom.nullspace()
    else:
        return None
    d = f.dim
    if N.shape[1] == 0:
        # domain is the single point z0: conjugate is affine
        return StructuredConvex(d, np.zeros((d, d)), z0,
                                -(z0 @ f.quad @ z0 + f.lin @ z0 + f.const),
                                AllSpace(d))
    Qr = N.T @ f.quad @ N
    w, V = np.linalg.eigh(Qr)
    thresh = max(1e-300, RANGE_TOL * max(1.0, w.max(initial=0.0)))
    pos = w > thresh
    S = N @ (V[:, pos] * (0.25 / w[pos])) @ V[:, pos].T @ N.T
    r = f.lin + 2.0 * f.quad @ z0
    lin = z0 - 2.0 * S @ r
    const = float(r @ S @ r - f.lin @ z0 - z0 @ f.quad @ z0 - f.const)
    if np.all(pos):
        domain = AllSpace(d)
    else:
        rows = (N @ V[:, ~pos]).T
        domain = AffineSet(rows, rows @ r)
    return StructuredConvex(d, S, lin, const, domain)


class ConjugateView:
    """Conjugate of a base function, optionally pre-composed with a symmetric
    signed permutation: ``m(y) = base*(S y)``.

    Values come from the base's certified conjugate computation, proximal
    maps from the Moreau identity, and the conjugate of the view is the
    (closed) base itself.
    """

    def __init__(self, base, S=None):
        self.base = base
        self.dim = base.dim
        self.S = None if S is None else np.asarray(S, dtype=float)
        if self.S is not None and not np.allclose(self.S @ self.S, np.eye(self.dim)):
            raise ConvexityError("pre-composition must be symmetric orthogonal")

    def _map(self, y):
        y = np.asarray(y, dtype=float).reshape(self.dim)
        return y if self.S is None else self.S @ y

    def value(self, y, feastol: float = FEAS_TOL) -> float:
        return self.base.conjugate_value(self._map(y)).value

    def value_batch(self, Y, feastol: float = FEAS_TOL) -> np.ndarray:
        return np.array([self.value(y) for y in np.asarray(Y, dtype=float)])

    def eval_subgrad(self, y, feastol: float = FEAS_TOL) -> SubgradResult:
        res = self.base.conjugate_value(self._map(y))
        if not math.isfinite(res.value):
            return SubgradResult(INF, None, ())
        g = res.argmax if self.S is None else self.S @ res.argmax
        return SubgradResult(res.value, g, ())

    def prox(self, v, step: float) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(self.dim)
        w = v if self.S is None else self.S @ v
        p = self.base.prox(w / step, 1.0 / step)
        q = w - step * p
        return q if self.S is None else self.S @ q

    def conjugate_value(self, z) -> ConjugateResult:
        z = np.asarray(z, dtype=float).reshape(self.dim)
        zz = z if self.S is None else self.S @ z
        val = self.base.value(zz)
        if val == INF:
            return ConjugateResult(INF, None, False)
        sub = self.base.eval_subgrad(zz)
        return ConjugateResult(val, None if sub.subgrad is None
                               else (sub.subgrad if self.S is None else self.S @ sub.subgrad),
                               False)

    def conjugate(self):
        if self.S is None:
            return self.base
        return self.base.precompose_signed_perm(self.S)


class PartialMinView:
    """Lazy partial minimization ``L(w) = inf_u f(w, u)``.

    Evaluation and control recovery go through :func:`inf_project`; the
    conjugate pins the eliminated slot of the base conjugate at zero; the
    proximal map solves the joint subproblem with the penalty on the kept
    block only.
    """

    def __init__(self, base: StructuredConvex, kept_idx, elim_idx):
        self.base = base
        self.kept_idx = tuple(int(i) for i in kept_idx)
        self.elim_idx = tuple(int(i) for i in elim_idx)
        if sorted(self.kept_idx + self.elim_idx) != list(range(base.dim)):
            raise ConvexityError("split must partition the coordinates")
        self.dim = len(self.kept_idx)

    def _embed(self, y_kept):
        y = np.zeros(self.base.dim)
        y[list(self.kept_idx)] = np.asarray(y_kept, dtype=float).reshape(self.dim)
        return y

    def value(self, w, feastol: float = FEAS_TOL) -> float:
        val, _, _ = inf_project(self.base, self.elim_idx, w)
        return val

    def value_batch(self, W, feastol: float = FEAS_TOL) -> np.ndarray:
        return np.array([self.value(w) for w in np.asarray(W, dtype=float)])

    def minimizer(self, w):
        _, u, _ = inf_project(self.base, self.elim_idx, w)
        return u

    def eval_subgrad(self, w, feastol: float = FEAS_TOL) -> SubgradResult:
        val, u, _ = inf_project(self.base, self.elim_idx, w)
        if not math.isfinite(val):
            return SubgradResult(INF, None, ())
        z = self._embed(w)
        z[list(self.elim_idx)] = u
        full = self.base.eval_subgrad(z)
        return SubgradResult(val, full.subgrad[list(self.kept_idx)], full.active)

    def prox(self, v, step: float) -> np.ndarray:
        w, _ = self.base.prox_partial(v, step, self.kept_idx, self.elim_idx)
        return w

    def conjugate_value(self, y_kept) -> ConjugateResult:
        res = self.base.conjugate_value(self._embed(y_kept))
        if res.unbounded or res.argmax is None:
            return res
        return ConjugateResult(res.value, res.argmax[list(self.kept_idx)], False)


# ---------------------------------------------------------------------------
# operations


def eval_subgrad(f, z, feastol: float = FEAS_TOL) -> SubgradResult:
    return f.eval_subgrad(z, feastol)


def conjugate(f, y) -> ConjugateResult:
    return f.conjugate_value(y)


def prox(f, z, step: float) -> np.ndarray:
    return f.prox(z, step)


def fy_residual(f, z, y, feastol: float = FEAS_TOL) -> float:
    """Fenchel-Young residual ``f(z) + f*(y) - z.y``.

    Nonnegative up to conjugate-solver tolerance; a value below tolerance
    certifies that y is a subgradient of f at z.  Raises when f(z) is not
    finite, where the residual is meaningless.
    """
    z = np.asarray(z, dtype=float).reshape(f.dim)
    y = np.asarray(y, dtype=float).reshape(f.dim)
    fz = f.value(z, feastol)
    if not math.isfinite(fz):
        raise EvaluationError("fy_residual requires a point with finite value")
    fstar = f.conjugate_value(y).value
    return float(fz + fstar - z @ y)


def inf_project(f: StructuredConvex, elim_idx, kept_point):
    """Partial minimization of f over a coordinate block.

    Returns ``(value, minimizer, flag)``.  On the supported family a finite
    infimum is attained; the reported minimizer breaks ties by least
    Euclidean norm (exactly on quadratic/affine sections, via a vanishing
    Tikhonov term on inequality-constrained sections).  ``flag`` is
    ``"unbounded"`` when the section descends to -inf, else "".
    """

    elim_idx = [int(i) for i in elim_idx]
    kept_idx = [i for i in range(f.dim) if i not in set(elim_idx)]
    kept_point = np.asarray(kept_point, dtype=float).reshape(len(kept_idx))
    sec = f.section(kept_idx, kept_point, elim_idx)
    if sec is None:
        return INF, None, ""
    d = sec.dim
    dom = sec.domain
    if isinstance(dom, (AllSpace, AffineSet)):
        if isinstance(dom, AllSpace):
            z0, N = np.zeros(d), np.eye(d)
        else:
            z0, N = dom.feasible_point(), dom.nullspace()
        if N.shape[1] == 0:
            return sec.value(z0), z0, ""
        Qr = N.T @ sec.quad @ N
        br = N.T @ (sec.lin + 2.0 * sec.quad @ z0)
        w, V = np.linalg.eigh(Qr)
        thresh = max(1e-300, RANGE_TOL * max(1.0, w.max(initial=0.0)))
        pos = w > thresh
        coeff = V.T @ br
        if np.any(np.abs(coeff[~pos]) > RANGE_TOL * (1.0 + np.linalg.norm(br))):
            return -INF, None, "unbounded"
        wr = V[:, pos] @ (-0.5 * coeff[pos] / w[pos])
        u = z0 + N @ wr
        # least-norm tie-break across the flat directions of the section
        flat = N @ V[:, ~pos]
        if flat.shape[1]:
            corr, *_ = np.linalg.lstsq(flat, u, rcond=None)
            u = u - flat @ corr
        return sec.value(u, feastol=1e-6), u, ""
    A_eq, b_eq, G, h = dom.rows()
    H = 2.0 * sec.quad
    wmin = np.linalg.eigvalsh(H).min() if d else 0.0
    if wmin <= 1e-12:
        H = H + 1e-10 * np.eye(d)  # vanishing Tikhonov: least-norm tie-break
    u, _ = solve_qp(H, -sec.lin, A_eq, b_eq, G, h)
    if np.linalg.norm(u) > 1e8:
        return -INF, None, "unbounded"
    return sec.value(u, feastol=1e-6), u, ""


def embed_descriptor(dom: SetDescriptor, idx, total: int) -> SetDescriptor:
    """Lift a descriptor on a coordinate block to the full space."""
    idx = list(idx)
    if isinstance(dom, AllSpace):
        return AllSpace(total)
    if isinstance(dom, Box):
        lower = np.full(total, -INF)
        upper = np.full(total, INF)
        lower[idx] = dom.lower
        upper[idx] = dom.upper
        return Box(lower, upper)
    if isinstance(dom, AffineSet):
        A = np.zeros((dom.A.shape[0], total))
        A[:, idx] = dom.A
        return AffineSet(A, dom.b)
    if isinstance(dom, Polyhedron):
        A = np.zeros((dom.A.shape[0], total))
        A[:, idx] = dom.A
        return Polyhedron(A, dom.b)
    if isinstance(dom, Intersection):
        return Intersection([embed_descriptor(p, idx, total) for p in dom.parts])
    raise ConvexityError(f"cannot embed descriptor {type(dom).__name__}")


def _flatten_parts(dom):
    if isinstance(dom, Intersection):
        out = []
        for p in dom.parts:
            out.extend(_flatten_parts(p))
        return out
    return [dom]


def _touches(part, idx):
    idx = list(idx)
    if isinstance(part, AllSpace):
        return False
    if isinstance(part, Box):
        return bool(np.any(np.isfinite(part.lower[idx]))
                    or np.any(np.isfinite(part.upper[idx])))
    if isinstance(part, (AffineSet, Polyhedron)):
        return bool(np.any(np.abs(part.A[:, idx]) > 1e-14))
    raise ConvexityError(f"unknown descriptor {type(part).__name__}")


def _restrict_part(part, kept_idx):
    kept_idx = list(kept_idx)
    if isinstance(part, AllSpace):
        return AllSpace(len(kept_idx))
    if isinstance(part, Box):
        return Box(part.lower[kept_idx], part.upper[kept_idx])
    if isinstance(part, AffineSet):
        return AffineSet(part.A[:, kept_idx], part.b)
    if isinstance(part, Polyhedron):
        return Polyhedron(part.A[:, kept_idx], part.b)
    raise ConvexityError(f"unknown descriptor {type(part).__name__}")


def partial_min_quadratic(f: StructuredConvex, elim_idx) -> StructuredConvex | None:
    """Closed-form partial minimization over a coordinate block.

    Returns the reduced function when the eliminated block appears only in
    affine equality constraints and the reduced quadratic is coercive on
    the remaining free directions (flat directions are tolerated when no
    kept point can exploit them).  Returns None when no closed form exists
    on the family, in which case callers fall back to the lazy view.
    """
    elim_idx = [int(i) for i in elim_idx]
    kept_idx = [i for i in range(f.dim) if i not in set(elim_idx)]
    dk, de = len(kept_idx), len(elim_idx)
    parts = _flatten_parts(f.domain)
    eq_rows, eq_rhs, kept_parts = [], [], []
    for part in parts:
        if isinstance(part, AffineSet):
            eq_rows.append(part.A)
            eq_rhs.append(part.b)
        elif _touches(part, elim_idx):
            return None
        else:
            kept_parts.append(_restrict_part(part, kept_idx))
    if eq_rows:
        E = np.vstack(eq_rows)
        b = np.concatenate(eq_rhs)
    else:
        E = np.zeros((0, f.dim))
        b = np.zeros(0)
    E_k, E_e = E[:, kept_idx], E[:, elim_idx]
    # rows unreachable by the eliminated block become kept-space constraints
    if E.shape[0]:
        NL = scipy.linalg.null_space(E_e.T)
        if NL.shape[1]:
            A_ind = NL.T @ E_k
            b_ind = NL.T @ b
            keepers = np.any(np.abs(A_ind) > 1e-12, axis=1) | (np.abs(b_ind) > 1e-12)
            if np.any(np.abs(b_ind[~np.any(np.abs(A_ind) > 1e-12, axis=1)]) > 1e-9):
                return None  # inconsistent regardless of kept point
            if np.any(keepers):
                try:
                    kept_parts.append(AffineSet(A_ind[keepers], b_ind[keepers]))
                except ConvexityError:
                    return None
        P0 = np.linalg.pinv(E_e)
        u0 = P0 @ b
        U1 = -P0 @ E_k
        Ne = scipy.linalg.null_space(E_e)
    else:
        u0 = np.zeros(de)
        U1 = np.zeros((de, dk))
        Ne = np.eye(de)
    # substitute u = u0 + U1 z + Ne w and minimize the quadratic over w
    Qkk = f.quad[np.ix_(kept_idx, kept_idx)]
    Qke = f.quad[np.ix_(kept_idx, elim_idx)]
    Qee = f.quad[np.ix_(elim_idx, elim_idx)]
    bk = f.lin[kept_idx]
    be = f.lin[elim_idx]
    # quadratic in (z, w):  z'Az z + 2 z'Bzw w + w'Cw w + lz.z + lw(z).w + c
    Az = Qkk + Qke @ U1 + U1.T @ Qke.T + U1.T @ Qee @ U1
    Bzw = (Qke + U1.T @ Qee) @ Ne
    Cw = Ne.T @ Qee @ Ne
    lz = bk + U1.T @ be + 2.0 * (Qke + U1.T @ Qee) @ u0
    lw0 = Ne.T @ (be + 2.0 * Qee @ u0)
    c0 = f.const + be @ u0 + u0 @ Qee @ u0
    if Cw.shape[0] == 0:
        dom = Intersection(kept_parts) if len(kept_parts) > 1 else (
            kept_parts[0] if kept_parts else AllSpace(dk))
        try:
            return StructuredConvex(dk, Az, lz, c0, dom)
        except ConvexityError:
            return None
    w_eig, V = np.linalg.eigh(Cw)
    thresh = max(1e-300, RANGE_TOL * max(1.0, w_eig.max(initial=0.0)))
    pos = w_eig > thresh
    if not np.all(pos):
        # flat directions: any dependence of the w-linear term on them makes
        # the infimum -inf for some kept point -> no closed form
        V0 = V[:, ~pos]
        if (np.max(np.abs(V0.T @ lw0), initial=0.0) > 1e-9
                or np.max(np.abs(V0.T @ (2.0 * Bzw.T)), initial=0.0) > 1e-9):
            return None
    Cinv = V[:, pos] @ np.diag(1.0 / w_eig[pos]) @ V[:, pos].T
    # w*(z) = -1/2 Cinv (2 Bzw' z + lw0)
    Ared = Az - Bzw @ Cinv @ Bzw.T
    lred = lz - Bzw @ Cinv @ lw0
    cred = c0 - 0.25 * lw0 @ Cinv @ lw0
    dom = Intersection(kept_parts) if len(kept_parts) > 1 else (
        kept_parts[0] if kept_parts else AllSpace(dk))
    try:
        return StructuredConvex(dk, Ared, lred, float(cred), dom)
    except ConvexityError:
        return None


def saddle_subgrad_check(h_in_p, h_neg_in_x, point, candidate):
    """Residual pair certifying membership in a concave-convex subdifferential.

    ``h_in_p`` is the convex section p -> h(x, p) at the fixed x, and
    ``h_neg_in_x`` the convex section x -> -h(x, p) at the fixed p.  The
    candidate ``(mw, v)`` asserts ``(mw, v) = (-w, v)`` with w a subgradient
    of the negated x-section and v one of the p-section.  Returns the two
    Fenchel-Young residuals ``(residual_p, residual_x)``.
    """
    x, p = point
    mw, v = candidate
    res_p = fy_residual(h_in_p, p, v)
    res_x = fy_residual(h_neg_in_x, x, -np.asarray(mw, dtype=float))
    return res_p, res_x
