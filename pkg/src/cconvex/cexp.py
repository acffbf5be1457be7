"""c-exponential maps, cotangent charts, modified costs, and dual frames.

The source-side c-exponential at x0 sends a covector p to the unique target
point xbar with -D_x c(x0, xbar) = p; the target-side map at xbar0 sends p to
the source point x with -D_xbar c(x, xbar0) = p.  Both are Newton solves with
backtracking; the built-in costs supply exact initial guesses:

    neg_inner_product      source: xbar = p            target: x = p
    half_squared_distance  source: xbar = x0 + p       target: x = xbar0 + p
    inverse_square         source: xbar = x0 - 2^{1/3}|p|^{-4/3} p
                           target: x = xbar0 - 2^{1/3}|p|^{-4/3} p

The modified frame re-expresses a potential and cost in the cotangent chart
anchored at a target point xbar0, normalized at a source point x_e, so that
the anchored cost vanishes identically at xbar0 and supporting functions
vanish at the zero covector offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costs import CostHandle, as_point, jet
from .errors import BadConfig, CExpDivergence, OutOfDomain, SingularFrame

_CBRT2 = 2.0 ** (1.0 / 3.0)


def _analytic_guess(cost: CostHandle, base: np.ndarray, p: np.ndarray,
                    side: str) -> Optional[np.ndarray]:
    if cost.kind == "neg_inner_product":
        return p.copy()
    if cost.kind == "half_squared_distance":
        return base + p
    if cost.kind == "inverse_square":
        norm = np.linalg.norm(p)
        if norm == 0.0:
            return None
        return base - _CBRT2 * norm ** (-4.0 / 3.0) * p
    return None


def _residual_and_jac(cost: CostHandle, base: np.ndarray, point: np.ndarray,
                      p: np.ndarray, side: str):
    j = jet(cost, base, point, order=2, check_domains=False) if side == "source" \
        else jet(cost, point, base, order=2, check_domains=False)
    if side == "source":
        res = -j.grad_x - p
        jac = -j.mixed
    else:
        res = -j.grad_xbar - p
        jac = -j.mixed.T
    return res, jac


def _newton_cexp(cost: CostHandle, base: np.ndarray, p: np.ndarray, side: str,
                 tol: float | None, max_iter: int,
                 initial: Optional[np.ndarray]) -> np.ndarray:
    scale = max(1.0, float(np.linalg.norm(p)))
    if tol is None:
        tol = 1e-11 * scale
    point = initial
    if point is None:
        point = _analytic_guess(cost, base, p, side)
    if point is None:
        dom = cost.domains.target if side == "source" else cost.domains.source
        lo, hi = dom.bounding_box()
        point = 0.5 * (lo + hi)
    point = point.astype(float).copy()

    res, jac = _residual_and_jac(cost, base, point, p, side)
    err = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if err <= tol:
            return point
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise CExpDivergence(f"singular Jacobian in c-exp Newton: {exc}")
        t = 1.0
        for _bt in range(30):
            cand = point + t * step
            try:
                res_c, jac_c = _residual_and_jac(cost, base, cand, p, side)
            except Exception:
                t *= 0.5
                continue
            err_c = float(np.linalg.norm(res_c))
            if err_c < err:
                point, res, jac, err = cand, res_c, jac_c, err_c
                break
            t *= 0.5
        else:
            raise CExpDivergence(
                f"c-exp backtracking stalled at residual {err:.3e} (tol {tol:.1e})")
    if err <= tol:
        return point
    raise CExpDivergence(
        f"c-exp Newton did not converge: residual {err:.3e} > tol {tol:.1e}")


def c_exp_source(cost: CostHandle, x0, p, tol: float | None = None,
                 max_iter: int = 50, initial=None,
                 check_domain: bool = False) -> np.ndarray:
    """Target point xbar with -D_x c(x0, xbar) = p."""
    x0 = as_point(x0, cost.dim)
    p = as_point(p, cost.dim)
    init = None if initial is None else as_point(initial, cost.dim)
    out = _newton_cexp(cost, x0, p, "source", tol, max_iter, init)
    if check_domain and not cost.domains.target.contains(out, tol=1e-9):
        raise OutOfDomain(f"c-exp image {out} left the target domain")
    return out


def c_exp_target(cost: CostHandle, xbar0, p, tol: float | None = None,
                 max_iter: int = 50, initial=None,
                 check_domain: bool = False) -> np.ndarray:
    """Source point x with -D_xbar c(x, xbar0) = p."""
    xbar0 = as_point(xbar0, cost.dim)
    p = as_point(p, cost.dim)
    init = None if initial is None else as_point(initial, cost.dim)
    out = _newton_cexp(cost, xbar0, p, "target", tol, max_iter, init)
    if check_domain and not cost.domains.source.contains(out, tol=1e-9):
        raise OutOfDomain(f"c-exp image {out} left the source domain")
    return out


def c_exp_source_batch(cost: CostHandle, x0, P) -> np.ndarray:
    """Vectorized c_exp_source for the built-in costs; loop otherwise."""
    x0 = as_point(x0, cost.dim)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if cost.kind == "neg_inner_product":
        return P.copy()
    if cost.kind == "half_squared_distance":
        return x0[None, :] + P
    if cost.kind == "inverse_square":
        norms = np.linalg.norm(P, axis=1)
        if np.any(norms == 0.0):
            raise CExpDivergence("zero covector has no inverse-square c-exp")
        return x0[None, :] - _CBRT2 * (norms ** (-4.0 / 3.0))[:, None] * P
    return np.array([c_exp_source(cost, x0, p) for p in P])


def c_exp_target_batch(cost: CostHandle, xbar0, P) -> np.ndarray:
    xbar0 = as_point(xbar0, cost.dim)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if cost.kind == "neg_inner_product":
        return P.copy()
    if cost.kind == "half_squared_distance":
        return xbar0[None, :] + P
    if cost.kind == "inverse_square":
        norms = np.linalg.norm(P, axis=1)
        if np.any(norms == 0.0):
            raise CExpDivergence("zero covector has no inverse-square c-exp")
        return xbar0[None, :] - _CBRT2 * (norms ** (-4.0 / 3.0))[:, None] * P
    return np.array([c_exp_target(cost, xbar0, p) for p in P])


# ---------------------------------------------------------------------------
# cotangent charts


@dataclass
class CotangentChart:
    """Chart [E]_base: points on one side -> covectors at a base on the other.

    side="target_base": base is a target point; forward maps source points E
    to -D_xbar c(E, base).  side="source_base": base is a source point;
    forward maps target points Ebar to -D_x c(base, Ebar).
    """

    cost: CostHandle
    base: np.ndarray
    side: str = "target_base"

    def __post_init__(self):
        if self.side not in ("target_base", "source_base"):
            raise BadConfig(f"unknown chart side {self.side!r}")
        self.base = as_point(self.base, self.cost.dim)

    def forward(self, point) -> np.ndarray:
        point = as_point(point, self.cost.dim)
        if self.side == "target_base":
            j = jet(self.cost, point, self.base, order=1, check_domains=False)
            return -j.grad_xbar
        j = jet(self.cost, self.base, point, order=1, check_domains=False)
        return -j.grad_x

    def forward_batch(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        kind = self.cost.kind
        b = self.base
        if kind == "neg_inner_product":
            return pts.copy()
        if kind == "half_squared_distance":
            return pts - b[None, :]
        if kind == "inverse_square":
            d = b[None, :] - pts if self.side == "target_base" else pts - b[None, :]
            # -D_xbar c(E, b) = 2(b - E)|b - E|^{-4}; -D_x c(b, Eb) = 2(b - Eb)|.|^{-4}
            d = -d if self.side == "source_base" else d
            r2 = np.sum(d * d, axis=1)
            return 2.0 * d / (r2 ** 2)[:, None]
        return np.array([self.forward(p) for p in pts])

    def inverse(self, covector, **kw) -> np.ndarray:
        if self.side == "target_base":
            return c_exp_target(self.cost, self.base, covector, **kw)
        return c_exp_source(self.cost, self.base, covector, **kw)

    def inverse_batch(self, covectors) -> np.ndarray:
        if self.side == "target_base":
            return c_exp_target_batch(self.cost, self.base, covectors)
        return c_exp_source_batch(self.cost, self.base, covectors)


# ---------------------------------------------------------------------------
# dual frames


@dataclass
class DualFrames:
    """Orthonormal source-side basis {e_i} and its cost-dual {ebar_i}.

    The defining relation is delta_ij = <e_i, (-DbarD c)^{-1} ebar_j> at the
    anchor pair, i.e. Ebar = -M E with M the mixed derivative matrix.  The
    last n-k columns of E span the valley directions.
    """

    k: int
    e: np.ndarray        # columns e_1..e_n
    ebar: np.ndarray     # columns ebar_1..ebar_n
    mixed: np.ndarray
    x_e: np.ndarray
    xbar0: np.ndarray
    p_e: np.ndarray      # [x_e]_{xbar0}
    pbar0: np.ndarray    # [xbar0]_{x_e}
    cond: float

    def p_coords(self, p) -> np.ndarray:
        return self.e.T @ (np.asarray(p, dtype=float) - self.p_e)

    def p_from_coords(self, a) -> np.ndarray:
        return self.p_e + self.e @ np.asarray(a, dtype=float)

    def pbar_coords(self, pbar) -> np.ndarray:
        return np.linalg.solve(self.ebar, np.asarray(pbar, dtype=float) - self.pbar0)

    def pbar_from_coords(self, b) -> np.ndarray:
        return self.pbar0 + self.ebar @ np.asarray(b, dtype=float)


def _orthonormal_valley(valley_basis, n: int, normal_hint=None) -> np.ndarray:
    vecs = [np.asarray(v, dtype=float) for v in valley_basis]
    if not vecs or not 1 <= len(vecs) <= n - 1:
        raise BadConfig("valley basis must have between 1 and n-1 vectors")
    if normal_hint is not None:
        hint = np.asarray(normal_hint, dtype=float)
        hint = hint / np.linalg.norm(hint)
        rest = []
        for v in vecs:
            w = v - (v @ hint) * hint
            if np.linalg.norm(w) > 1e-10:
                rest.append(w)
        vecs = rest + [hint]
    basis = []
    for v in vecs:
        w = v.copy()
        for b in basis:
            w -= (w @ b) * b
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            raise BadConfig("valley basis is linearly dependent")
        basis.append(w / norm)
    return np.column_stack(basis)


def build_dual_frames(cost: CostHandle, x_e, xbar0, valley_basis,
                      normal_hint=None, verify_pairs: int = 100,
                      seed: int = 0, tol: float = 1e-10) -> DualFrames:
    """Frames adapted to a valley at (x_e, xbar0); pairing verified by sampling."""
    x_e = as_point(x_e, cost.dim)
    xbar0 = as_point(xbar0, cost.dim)
    n = cost.dim
    V = _orthonormal_valley(valley_basis, n, normal_hint)
    m = V.shape[1]
    k = n - m
    # complement: the left singular vectors of (I - V V^T) with nonzero sigma
    proj = np.eye(n) - V @ V.T
    u, s, _ = np.linalg.svd(proj)
    comp = u[:, :k] if k > 0 else np.zeros((n, 0))
    E = np.column_stack([comp, V])

    j = jet(cost, x_e, xbar0, order=2, check_domains=False)
    M = j.mixed
    det = float(np.linalg.det(M))
    if abs(det) < 1e-14:
        raise SingularFrame(f"mixed derivative matrix singular (det={det:.2e})")
    Ebar = -M @ E
    cond = float(np.linalg.cond(M))

    frames = DualFrames(
        k=k, e=E, ebar=Ebar, mixed=M, x_e=x_e, xbar0=xbar0,
        p_e=-j.grad_xbar, pbar0=-j.grad_x, cond=cond)

    rng = np.random.default_rng(seed)
    Minv = np.linalg.inv(-M)
    worst = 0.0
    for _ in range(verify_pairs):
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        lhs = float(a @ b)
        rhs = float((E @ a) @ (Minv @ (Ebar @ b)))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    if worst > tol:
        raise SingularFrame(f"dual pairing identity failed at {worst:.3e}")
    return frames


# ---------------------------------------------------------------------------
# modified cost / potential / supporting functions


@dataclass
class ModifiedFrame:
    """Cost and potential re-expressed in the chart anchored at xbar0.

    ctilde(p, xbar) = c(X(p), xbar) - c(X(p), xbar0) with X the target-side
    c-exponential at xbar0; utilde is the potential in the same chart,
    normalized (when x_e is given) so utilde(p_e) = 0; mtilde_pbar are the
    anchored supporting functions, identically zero at pbar offset 0.
    """

    cost: CostHandle
    potential: Callable
    xbar0: np.ndarray
    x_e: Optional[np.ndarray] = None
    p_e: Optional[np.ndarray] = None
    pbar0: Optional[np.ndarray] = None
    norm_const: float = 0.0
    _chart: CotangentChart = field(init=False, repr=False)

    def __post_init__(self):
        self.xbar0 = as_point(self.xbar0, self.cost.dim)
        self._chart = CotangentChart(self.cost, self.xbar0, side="target_base")
        if self.x_e is not None:
            self.x_e = as_point(self.x_e, self.cost.dim)
            j = jet(self.cost, self.x_e, self.xbar0, order=1, check_domains=False)
            self.p_e = -j.grad_xbar
            self.pbar0 = -j.grad_x
            self.norm_const = (self._u(self.x_e)
                               + self.cost.value(self.x_e, self.xbar0,
                                                 check_domains=False))

    def _u(self, x) -> float:
        u = self.potential
        val = u.evaluate(x).value if hasattr(u, "evaluate") else u(x)
        return float(val)

    def point_of(self, p, initial=None) -> np.ndarray:
        return c_exp_target(self.cost, self.xbar0, p, initial=initial)

    def chart_of(self, x) -> np.ndarray:
        return self._chart.forward(x)

    def ctilde(self, p, xbar, x: Optional[np.ndarray] = None) -> float:
        if x is None:
            x = self.point_of(p)
        return (self.cost.value(x, xbar, check_domains=False)
                - self.cost.value(x, self.xbar0, check_domains=False))

    def utilde(self, p, x: Optional[np.ndarray] = None) -> float:
        if x is None:
            x = self.point_of(p)
        return (self._u(x)
                + self.cost.value(x, self.xbar0, check_domains=False)
                - self.norm_const)

    def target_of_offset(self, pbar_offset) -> np.ndarray:
        """Target point for a covector offset from pbar0 at x_e."""
        if self.x_e is None:
            raise BadConfig("mtilde needs the frame normalized at x_e")
        pbar = self.pbar0 + np.asarray(pbar_offset, dtype=float)
        return c_exp_source(self.cost, self.x_e, pbar)

    def mtilde(self, pbar_offset, p, x: Optional[np.ndarray] = None,
               xbar_cache: Optional[np.ndarray] = None) -> float:
        """Supporting function anchored at covector offset pbar (0 -> identically 0)."""
        if self.x_e is None:
            raise BadConfig("mtilde needs the frame normalized at x_e")
        xbar = self.target_of_offset(pbar_offset) if xbar_cache is None else xbar_cache
        if x is None:
            x = self.point_of(p)
        return (-self.ctilde(p, xbar, x=x)
                + self.ctilde(self.p_e, xbar, x=self.x_e))

    def modified_differential(self, p, xbar, x: Optional[np.ndarray] = None) -> np.ndarray:
        """-D_p ctilde(p, xbar) via the inverse mixed matrix at the anchor."""
        if x is None:
            x = self.point_of(p)
        j0 = jet(self.cost, x, self.xbar0, order=2, check_domains=False)
        j1 = jet(self.cost, x, xbar, order=1, check_domains=False)
        rhs = -j1.grad_x + j0.grad_x
        return np.linalg.solve(-j0.mixed, rhs)
