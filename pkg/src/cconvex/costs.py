"""Cost functions with derivative jets up to fourth order.

A cost c(x, xbar) is evaluated on a source/target domain pair.  Three
built-ins carry closed-form derivative blocks:

    neg_inner_product       c = -<x, xbar>
    half_squared_distance   c = |x - xbar|^2 / 2
    inverse_square          c = |x - xbar|^{-2}

plus ``user_expression`` costs written in the restricted grammar of
:mod:`cconvex.expressions`.  Every cost also exposes a generic scalar form
that runs on Dual numbers or floats, feeding the two derivative engines
(nested duals: exact; central differences with Richardson: approximate),
so closed forms can always be cross-validated against an independent path.

Index conventions for the jet blocks, with D = d/dx and Db = d/dxbar:

    mixed[i, j]           = D_i Db_j c
    third_xxb[i, j, k]    = D_i D_j Db_k c
    third_xbb[i, j, k]    = D_i Db_j Db_k c
    fourth_xxbb[i,j,k,l]  = D_i D_j Db_k Db_l c
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dualnum import Dual
from .errors import (BadConfig, DiagonalSingularity, DomainViolation,
                     NumericalInstability, TwistViolation)
from .expressions import compile_cost_expression

BUILTIN_KINDS = ("neg_inner_product", "half_squared_distance", "inverse_square")
COST_KINDS = BUILTIN_KINDS + ("user_expression",)

_EPS = np.finfo(float).eps


def as_point(x, dim: int | None = None) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim != 1:
        raise BadConfig(f"point must be a 1-d array, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise BadConfig(f"point has dimension {p.shape[0]}, expected {dim}")
    return p


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Domain:
    """Axis box, ball, or annulus; the supported geometric vocabularies."""

    kind: str
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    r_inner: float = 0.0
    r_outer: float = 0.0

    @staticmethod
    def box(lo, hi) -> "Domain":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise BadConfig("box needs lo < hi componentwise")
        return Domain("box", lo.size, lo=lo, hi=hi)

    @staticmethod
    def ball(center, radius: float) -> "Domain":
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise BadConfig("ball radius must be positive")
        return Domain("ball", center.size, center=center, r_outer=float(radius))

    @staticmethod
    def annulus(center, r_inner: float, r_outer: float) -> "Domain":
        center = np.asarray(center, dtype=float)
        if not 0 < r_inner < r_outer:
            raise BadConfig("annulus needs 0 < r_inner < r_outer")
        return Domain("annulus", center.size, center=center,
                      r_inner=float(r_inner), r_outer=float(r_outer))

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))
        r = float(np.linalg.norm(x - self.center))
        if self.kind == "ball":
            return r <= self.r_outer + tol
        return self.r_inner - tol <= r <= self.r_outer + tol

    def distance_to_boundary(self, x) -> float:
        """Distance from an inside point to the topological boundary."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return float(min(np.min(x - self.lo), np.min(self.hi - x)))
        r = float(np.linalg.norm(x - self.center))
        if self.kind == "ball":
            return self.r_outer - r
        return min(r - self.r_inner, self.r_outer - r)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return self.lo.copy(), self.hi.copy()
        r = self.r_outer
        return self.center - r, self.center + r

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.hi - self.lo))
        n = self.dim
        unit = np.pi ** (n / 2) / math.gamma(n / 2 + 1)
        if self.kind == "ball":
            return unit * self.r_outer ** n
        return unit * (self.r_outer ** n - self.r_inner ** n)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.bounding_box()
        out = np.empty((count, self.dim))
        got = 0
        while got < count:
            cand = rng.uniform(lo, hi, size=(max(count - got, 16), self.dim))
            if self.kind != "box":
                keep = np.array([self.contains(c) for c in cand])
                cand = cand[keep]
            take = min(len(cand), count - got)
            out[got:got + take] = cand[:take]
            got += take
        return out


@dataclass(frozen=True)
class DomainPair:
    source: Domain
    target: Domain
    diagonal_margin: float = 0.0

    @staticmethod
    def of(source: Domain, target: Domain,
           diagonal_margin: float | None = None) -> "DomainPair":
        if source.dim != target.dim:
            raise BadConfig("source and target dimensions differ")
        if diagonal_margin is None:
            lo1, hi1 = source.bounding_box()
            lo2, hi2 = target.bounding_box()
            diam = float(np.linalg.norm(np.maximum(hi1, hi2) - np.minimum(lo1, lo2)))
            diagonal_margin = 1e-3 * diam
        return DomainPair(source, target, float(diagonal_margin))


def default_domains(dim: int) -> DomainPair:
    box = Domain.box(-np.ones(dim), np.ones(dim))
    return DomainPair.of(box, box)


# ---------------------------------------------------------------------------
# derivative jet


@dataclass
class DerivativeJet:
    order: int
    value: float
    grad_x: Optional[np.ndarray] = None
    grad_xbar: Optional[np.ndarray] = None
    hess_x: Optional[np.ndarray] = None
    hess_xbar: Optional[np.ndarray] = None
    mixed: Optional[np.ndarray] = None
    third_xxb: Optional[np.ndarray] = None
    third_xbb: Optional[np.ndarray] = None
    fourth_xxbb: Optional[np.ndarray] = None

    def blocks(self) -> dict[str, np.ndarray]:
        out = {"value": np.array(self.value)}
        for name in ("grad_x", "grad_xbar", "hess_x", "hess_xbar", "mixed",
                     "third_xxb", "third_xbb", "fourth_xxbb"):
            b = getattr(self, name)
            if b is not None:
                out[name] = b
        return out


# ---------------------------------------------------------------------------
# the cost handle


@dataclass
class CostHandle:
    kind: str
    dim: int
    domains: DomainPair
    engine: str = "dual"
    expression: Optional[str] = None
    params: dict = field(default_factory=dict)
    _expr_fn: Optional[Callable] = field(default=None, repr=False)

    @staticmethod
    def create(kind: str, dim: int, domains: DomainPair | None = None,
               engine: str = "dual", expression: str | None = None,
               params: dict | None = None,
               diagonal_margin: float | None = None) -> "CostHandle":
        if kind not in COST_KINDS:
            raise BadConfig(f"unknown cost kind {kind!r}")
        if engine not in ("dual", "fd"):
            raise BadConfig(f"unknown engine {engine!r}")
        if domains is None:
            domains = default_domains(dim)
        if diagonal_margin is not None:
            domains = DomainPair(domains.source, domains.target,
                                 float(diagonal_margin))
        expr_fn = None
        if kind == "user_expression":
            if not expression:
                raise BadConfig("user_expression cost needs an expression string")
            expr_fn = compile_cost_expression(expression)
        elif expression:
            raise BadConfig("expression only valid for user_expression costs")
        return CostHandle(kind=kind, dim=dim, domains=domains, engine=engine,
                          expression=expression, params=dict(params or {}),
                          _expr_fn=expr_fn)

    # -- bookkeeping --------------------------------------------------------

    @property
    def singular_on_diagonal(self) -> bool:
        if self.kind == "inverse_square":
            return True
        return bool(self.params.get("singular_on_diagonal", self.kind == "user_expression"))

    def _check_pair(self, x: np.ndarray, xbar: np.ndarray,
                    check_domains: bool = True) -> None:
        if check_domains:
            if not self.domains.source.contains(x, tol=1e-9):
                raise DomainViolation(f"source point {x} outside domain")
            if not self.domains.target.contains(xbar, tol=1e-9):
                raise DomainViolation(f"target point {xbar} outside domain")
        if self.singular_on_diagonal:
            margin = self.domains.diagonal_margin
            if float(np.linalg.norm(x - xbar)) < margin:
                raise DiagonalSingularity(
                    f"|x - xbar| < diagonal margin {margin:g}")

    def scalar_fn(self) -> Callable:
        """Generic scalar form usable with floats or Dual numbers."""
        if self.kind == "neg_inner_product":
            def f(xi, bi):
                out = None
                for a, b in zip(xi, bi):
                    t = a * b
                    out = t if out is None else out + t
                return -out
            return f
        if self.kind == "half_squared_distance":
            def f(xi, bi):
                out = None
                for a, b in zip(xi, bi):
                    d = a - b
                    t = d * d
                    out = t if out is None else out + t
                return out * 0.5
            return f
        if self.kind == "inverse_square":
            def f(xi, bi):
                out = None
                for a, b in zip(xi, bi):
                    d = a - b
                    t = d * d
                    out = t if out is None else out + t
                return 1.0 / out
            return f
        return self._expr_fn

    # -- evaluation ---------------------------------------------------------

    def value(self, x, xbar, check_domains: bool = True) -> float:
        x = as_point(x, self.dim)
        xbar = as_point(xbar, self.dim)
        self._check_pair(x, xbar, check_domains)
        return self._value_unchecked(x, xbar)

    def _value_unchecked(self, x: np.ndarray, xbar: np.ndarray) -> float:
        if self.kind == "neg_inner_product":
            return float(-x @ xbar)
        if self.kind == "half_squared_distance":
            return float(0.5 * np.sum((x - xbar) ** 2))
        if self.kind == "inverse_square":
            return float(1.0 / np.sum((x - xbar) ** 2))
        return float(self._expr_fn(list(x), list(xbar)))

    def pairwise(self, X, Y, check: bool = False) -> np.ndarray:
        """Cost matrix C[a, b] = c(X[a], Y[b]); vectorized for built-ins."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.kind == "neg_inner_product":
            return -X @ Y.T
        if self.kind in ("half_squared_distance", "inverse_square"):
            sq = (np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :]
                  - 2.0 * X @ Y.T)
            np.maximum(sq, 0.0, out=sq)
            if self.kind == "half_squared_distance":
                return 0.5 * sq
            margin = self.domains.diagonal_margin
            if np.any(sq < margin * margin):
                raise DiagonalSingularity("pairwise evaluation hit the diagonal margin")
            return 1.0 / sq
        out = np.empty((X.shape[0], Y.shape[0]))
        for a, xa in enumerate(X):
            for b, yb in enumerate(Y):
                out[a, b] = self._expr_fn(list(xa), list(yb))
        return out

    # -- analytic jets ------------------------------------------------------

    def has_analytic_jet(self) -> bool:
        return self.kind in BUILTIN_KINDS

    def analytic_jet(self, x: np.ndarray, xbar: np.ndarray, order: int) -> DerivativeJet:
        n = self.dim
        eye = np.eye(n)
        if self.kind == "neg_inner_product":
            jet = DerivativeJet(order, float(-x @ xbar), -xbar.copy(), -x.copy())
            if order >= 2:
                jet.hess_x = np.zeros((n, n))
                jet.hess_xbar = np.zeros((n, n))
                jet.mixed = -eye.copy()
            if order >= 3:
                jet.third_xxb = np.zeros((n, n, n))
                jet.third_xbb = np.zeros((n, n, n))
            if order >= 4:
                jet.fourth_xxbb = np.zeros((n, n, n, n))
            return jet
        if self.kind == "half_squared_distance":
            u = x - xbar
            jet = DerivativeJet(order, float(0.5 * u @ u), u.copy(), -u.copy())
            if order >= 2:
                jet.hess_x = eye.copy()
                jet.hess_xbar = eye.copy()
                jet.mixed = -eye.copy()
            if order >= 3:
                jet.third_xxb = np.zeros((n, n, n))
                jet.third_xbb = np.zeros((n, n, n))
            if order >= 4:
                jet.fourth_xxbb = np.zeros((n, n, n, n))
            return jet
        if self.kind == "inverse_square":
            u = x - xbar
            s = float(u @ u)
            g1 = -2.0 * u / s ** 2
            jet = DerivativeJet(order, 1.0 / s, g1, -g1)
            if order >= 2:
                g2 = -2.0 * eye / s ** 2 + 8.0 * np.outer(u, u) / s ** 3
                jet.hess_x = g2
                jet.hess_xbar = g2.copy()
                jet.mixed = -g2
            if order >= 3:
                du = eye  # delta_{ij}
                g3 = (8.0 / s ** 3) * (
                    du[:, :, None] * u[None, None, :]
                    + du[:, None, :] * u[None, :, None]
                    + du[None, :, :] * u[:, None, None]
                ) - (48.0 / s ** 4) * (u[:, None, None] * u[None, :, None] * u[None, None, :])
                jet.third_xxb = -g3
                jet.third_xbb = g3
            if order >= 4:
                dd = (eye[:, :, None, None] * eye[None, None, :, :]
                      + eye[:, None, :, None] * eye[None, :, None, :]
                      + eye[:, None, None, :] * eye[None, :, :, None])
                six = (np.einsum("ij,k,l->ijkl", eye, u, u)
                       + np.einsum("ik,j,l->ijkl", eye, u, u)
                       + np.einsum("il,j,k->ijkl", eye, u, u)
                       + np.einsum("jk,i,l->ijkl", eye, u, u)
                       + np.einsum("jl,i,k->ijkl", eye, u, u)
                       + np.einsum("kl,i,j->ijkl", eye, u, u))
                g4 = (8.0 / s ** 3) * dd - (48.0 / s ** 4) * six \
                    + (384.0 / s ** 5) * np.einsum("i,j,k,l->ijkl", u, u, u, u)
                jet.fourth_xxbb = g4
            return jet
        raise BadConfig("no analytic jet for user_expression costs")


# ---------------------------------------------------------------------------
# derivative engines


def _dual_partial(f: Callable, x: np.ndarray, xbar: np.ndarray,
                  x_dirs: tuple[int, ...], xbar_dirs: tuple[int, ...]) -> float:
    """Exact mixed partial via one nested-dual evaluation."""
    level = len(x_dirs) + len(xbar_dirs)
    if level == 0:
        return float(f(list(x), list(xbar)))
    xi = [Dual.constant(v, level) for v in x]
    bi = [Dual.constant(v, level) for v in xbar]
    slot = 0
    for i in x_dirs:
        xi[i] = xi[i] + Dual.seeded(0.0, (slot,), level)
        slot += 1
    for j in xbar_dirs:
        bi[j] = bi[j] + Dual.seeded(0.0, (slot,), level)
        slot += 1
    out = f(xi, bi)
    return out.coefficient((1 << level) - 1)


def dual_jet(f: Callable, x: np.ndarray, xbar: np.ndarray, order: int) -> DerivativeJet:
    n = x.size
    jet = DerivativeJet(order, float(f(list(x), list(xbar))))
    if order >= 1:
        jet.grad_x = np.array([_dual_partial(f, x, xbar, (i,), ()) for i in range(n)])
        jet.grad_xbar = np.array([_dual_partial(f, x, xbar, (), (j,)) for j in range(n)])
    if order >= 2:
        hx = np.empty((n, n))
        hb = np.empty((n, n))
        mx = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                hx[i, j] = hx[j, i] = _dual_partial(f, x, xbar, (i, j), ())
                hb[i, j] = hb[j, i] = _dual_partial(f, x, xbar, (), (i, j))
        for i in range(n):
            for j in range(n):
                mx[i, j] = _dual_partial(f, x, xbar, (i,), (j,))
        jet.hess_x, jet.hess_xbar, jet.mixed = hx, hb, mx
    if order >= 3:
        t1 = np.empty((n, n, n))
        t2 = np.empty((n, n, n))
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    v = _dual_partial(f, x, xbar, (i, j), (k,))
                    t1[i, j, k] = t1[j, i, k] = v
                    w = _dual_partial(f, x, xbar, (k,), (i, j))
                    t2[k, i, j] = t2[k, j, i] = w
        jet.third_xxb, jet.third_xbb = t1, t2
    if order >= 4:
        t4 = np.empty((n, n, n, n))
        for i in range(n):
            for j in range(i, n):
                for k in range(n):
                    for l in range(k, n):
                        v = _dual_partial(f, x, xbar, (i, j), (k, l))
                        t4[i, j, k, l] = t4[j, i, k, l] = v
                        t4[i, j, l, k] = t4[j, i, l, k] = v
        jet.fourth_xxbb = t4
    return jet


def _fd_partial(f: Callable, x: np.ndarray, xbar: np.ndarray,
                x_dirs: tuple[int, ...], xbar_dirs: tuple[int, ...],
                h: float) -> float:
    """Tensor-product central difference for one mixed partial at step h."""
    m = len(x_dirs) + len(xbar_dirs)
    if m == 0:
        return float(f(list(x), list(xbar)))
    total = 0.0
    for signs in itertools.product((1.0, -1.0), repeat=m):
        xs = x.copy()
        bs = xbar.copy()
        for s, i in zip(signs[:len(x_dirs)], x_dirs):
            xs[i] += s * h
        for s, j in zip(signs[len(x_dirs):], xbar_dirs):
            bs[j] += s * h
        total += float(np.prod(signs)) * float(f(list(xs), list(bs)))
    return total / (2.0 * h) ** m


def _fd_richardson(f, x, xbar, x_dirs, xbar_dirs, h: float) -> float:
    coarse = _fd_partial(f, x, xbar, x_dirs, xbar_dirs, h)
    fine = _fd_partial(f, x, xbar, x_dirs, xbar_dirs, h / 2.0)
    return (4.0 * fine - coarse) / 3.0


def fd_jet(f: Callable, x: np.ndarray, xbar: np.ndarray, order: int,
           scale: float | None = None) -> DerivativeJet:
    """Central differences with one Richardson level; step h = eps^(1/6)*scale."""
    n = x.size
    if scale is None:
        scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(xbar))))
    h = _EPS ** (1.0 / 6.0) * scale
    jet = DerivativeJet(order, float(f(list(x), list(xbar))))
    if order >= 1:
        jet.grad_x = np.array([_fd_richardson(f, x, xbar, (i,), (), h) for i in range(n)])
        jet.grad_xbar = np.array([_fd_richardson(f, x, xbar, (), (j,), h) for j in range(n)])
    if order >= 2:
        jet.hess_x = np.array([[_fd_richardson(f, x, xbar, (i, j), (), h)
                                for j in range(n)] for i in range(n)])
        jet.hess_xbar = np.array([[_fd_richardson(f, x, xbar, (), (i, j), h)
                                   for j in range(n)] for i in range(n)])
        jet.mixed = np.array([[_fd_richardson(f, x, xbar, (i,), (j,), h)
                               for j in range(n)] for i in range(n)])
    if order >= 3:
        jet.third_xxb = np.array([[[_fd_richardson(f, x, xbar, (i, j), (k,), h)
                                    for k in range(n)] for j in range(n)] for i in range(n)])
        jet.third_xbb = np.array([[[_fd_richardson(f, x, xbar, (i,), (j, k), h)
                                    for k in range(n)] for j in range(n)] for i in range(n)])
    if order >= 4:
        jet.fourth_xxbb = np.array(
            [[[[_fd_richardson(f, x, xbar, (i, j), (k, l), h)
                for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)])
    return jet


# ---------------------------------------------------------------------------
# spec operations


def eval_cost(cost: CostHandle, x, xbar, check_domains: bool = True) -> float:
    return cost.value(x, xbar, check_domains=check_domains)


def jet(cost: CostHandle, x, xbar, order: int = 4,
        engine: str | None = None, cross_check: bool = False,
        cross_tol: float | None = None,
        check_domains: bool = True) -> DerivativeJet:
    """Derivative jet of the cost at (x, xbar).

    engine=None uses the closed form for built-ins and the handle's
    configured engine for user expressions.  cross_check=True computes an
    independent second path and raises NumericalInstability when the worst
    relative block error exceeds cross_tol.
    """
    if not 0 <= order <= 4:
        raise BadConfig("jet order must be between 0 and 4")
    x = as_point(x, cost.dim)
    xbar = as_point(xbar, cost.dim)
    cost._check_pair(x, xbar, check_domains)

    if engine is None:
        engine = "analytic" if cost.has_analytic_jet() else cost.engine
    f = cost.scalar_fn()
    if engine == "analytic":
        out = cost.analytic_jet(x, xbar, order)
    elif engine == "dual":
        out = dual_jet(f, x, xbar, order)
    elif engine == "fd":
        out = fd_jet(f, x, xbar, order)
    else:
        raise BadConfig(f"unknown engine {engine!r}")

    if cross_check:
        alt_engine = "dual" if engine in ("analytic", "fd") else "analytic"
        if alt_engine == "analytic" and not cost.has_analytic_jet():
            alt_engine = "fd"
        alt = jet(cost, x, xbar, order=order, engine=alt_engine,
                  cross_check=False, check_domains=False)
        tol = cross_tol if cross_tol is not None else (
            1e-4 if "fd" in (engine, alt_engine) else 1e-7)
        worst = 0.0
        for name, blk in out.blocks().items():
            ref = alt.blocks()[name]
            denom = max(1.0, float(np.max(np.abs(ref))))
            err = float(np.max(np.abs(blk - ref))) / denom
            worst = max(worst, err)
        if worst > tol:
            raise NumericalInstability(
                f"jet cross-check mismatch {worst:.3e} > {tol:.1e} "
                f"({engine} vs {alt_engine})")
    return out


def check_nondegeneracy(cost: CostHandle, x, xbar,
                        floor: float | None = None) -> dict:
    """Determinant of the mixed block and whether it clears a scaled floor."""
    j = jet(cost, x, xbar, order=2)
    m = j.mixed
    det = float(np.linalg.det(m))
    if floor is None:
        scale = max(1.0, float(np.linalg.norm(m, ord="fro")))
        floor = 1e-12 * scale ** cost.dim
    return {"det": det, "ok": abs(det) > floor, "floor": floor}


def check_twist(cost: CostHandle, x0, n_samples: int = 64,
                seed: int = 0, floor: float = 1e-10,
                raise_on_fail: bool = True) -> dict:
    """Injectivity probe of xbar -> -D_x c(x0, xbar) on sampled target pairs."""
    x0 = as_point(x0, cost.dim)
    rng = np.random.default_rng(seed)
    pts = cost.domains.target.sample(rng, n_samples)
    covs = np.array([-jet(cost, x0, p, order=1, check_domains=False).grad_x
                     for p in pts])
    worst = np.inf
    witness = None
    for a in range(n_samples):
        for b in range(a + 1, n_samples):
            sep = float(np.linalg.norm(pts[a] - pts[b]))
            if sep < 1e-9:
                continue
            ratio = float(np.linalg.norm(covs[a] - covs[b])) / sep
            if ratio < worst:
                worst = ratio
                witness = (pts[a].copy(), pts[b].copy())
    ok = worst > floor
    if not ok and raise_on_fail:
        raise TwistViolation(
            f"covector separation ratio {worst:.3e} at floor {floor:.1e}")
    return {"ok": ok, "min_ratio": worst, "witness": witness}
