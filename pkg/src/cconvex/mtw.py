"""Curvature tensor of a cost along c-exponential fibers, and its sign.

For a cost with invertible mixed derivatives, A(x, p) = -D^2_xx c(x, xbar(p))
with xbar(p) the source-side c-exponential.  The quantity of interest is the
second p-derivative of A contracted twice with V and twice with eta:

    form(x, p, V, eta) = d^2/dt^2 [ V^T A(x, p + t eta) V ] |_{t=0}

Nonnegativity over orthogonal unit pairs is the weak curvature condition
(A3w); a uniform positive lower bound is the strong one (A3s); nonnegativity
without the orthogonality constraint is the no-orthogonality variant (NNCC).
Verdicts here are sampled statements over randomly drawn base pairs with
random-restart projected-gradient minimization, not certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cexp import c_exp_source
from .costs import CostHandle, as_point, check_nondegeneracy, check_twist, jet
from .errors import InconclusiveClassification, NondegeneracyViolation

_FD_STEP_COEF = 1e-4


@dataclass
class AMatrix:
    x: np.ndarray
    p: np.ndarray
    xbar: np.ndarray
    matrix: np.ndarray


@dataclass
class MtwWitness:
    x: np.ndarray
    xbar: np.ndarray
    p: np.ndarray
    V: np.ndarray
    eta: np.ndarray
    value: float

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "xbar": self.xbar.tolist(),
                "p": self.p.tolist(), "V": self.V.tolist(),
                "eta": self.eta.tolist(), "value": self.value}


@dataclass
class MtwReport:
    classification: str          # "A3s" | "A3w_only" | "fails_A3w"
    delta0: Optional[float]
    nncc_holds: bool
    nncc_witness: Optional[MtwWitness]
    orth_min: float
    orth_witness: Optional[MtwWitness]
    aligned_value: float
    samples: int
    restarts: int
    tol: float
    pair_minima: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "delta0": self.delta0,
            "nncc": {"holds": self.nncc_holds,
                     "witness": self.nncc_witness.to_dict() if self.nncc_witness else None},
            "orth_min": self.orth_min,
            "orth_witness": self.orth_witness.to_dict() if self.orth_witness else None,
            "aligned_value": self.aligned_value,
            "samples": self.samples,
            "restarts": self.restarts,
            "tol": self.tol,
        }


def a_matrix(cost: CostHandle, x, p, xbar=None) -> AMatrix:
    """A(x, p) = -D^2_xx c at (x, c-exp_x(p))."""
    x = as_point(x, cost.dim)
    p = as_point(p, cost.dim)
    if xbar is None:
        xbar = c_exp_source(cost, x, p)
    j = jet(cost, x, xbar, order=2, check_domains=False)
    return AMatrix(x=x, p=p, xbar=xbar, matrix=-j.hess_x)


def _a_only(cost: CostHandle, x: np.ndarray, p: np.ndarray,
            guess: Optional[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    xbar = c_exp_source(cost, x, p, initial=guess)
    j = jet(cost, x, xbar, order=2, check_domains=False)
    return -j.hess_x, xbar


def mtw_form(cost: CostHandle, x, xbar, V, eta, step: float | None = None) -> float:
    """Contracted second p-derivative of A, by central differences in p."""
    x = as_point(x, cost.dim)
    xbar = as_point(xbar, cost.dim)
    V = as_point(V, cost.dim)
    eta = as_point(eta, cost.dim)
    j = jet(cost, x, xbar, order=1, check_domains=False)
    p = -j.grad_x
    if step is None:
        step = _FD_STEP_COEF * max(float(np.linalg.norm(p)), 1.0)
    a0, _ = _a_only(cost, x, p, xbar)
    ap, _ = _a_only(cost, x, p + step * eta, xbar)
    am, _ = _a_only(cost, x, p - step * eta, xbar)
    sec = (ap - 2.0 * a0 + am) / step ** 2
    return float(V @ sec @ V)


def mtw_tensor(cost: CostHandle, x, p, step: float | None = None) -> np.ndarray:
    """T[i,j,k,l] = d^2 A_ij / dp_k dp_l by central differences."""
    x = as_point(x, cost.dim)
    p = as_point(p, cost.dim)
    n = cost.dim
    if step is None:
        step = _FD_STEP_COEF * max(float(np.linalg.norm(p)), 1.0)
    a0, xbar0 = _a_only(cost, x, p, None)
    T = np.empty((n, n, n, n))
    plus = {}
    minus = {}
    for k in range(n):
        ek = np.zeros(n); ek[k] = step
        plus[k], _ = _a_only(cost, x, p + ek, xbar0)
        minus[k], _ = _a_only(cost, x, p - ek, xbar0)
        T[:, :, k, k] = (plus[k] - 2.0 * a0 + minus[k]) / step ** 2
    for k in range(n):
        for l in range(k + 1, n):
            ek = np.zeros(n); ek[k] = step
            el = np.zeros(n); el[l] = step
            app, _ = _a_only(cost, x, p + ek + el, xbar0)
            apm, _ = _a_only(cost, x, p + ek - el, xbar0)
            amp, _ = _a_only(cost, x, p - ek + el, xbar0)
            amm, _ = _a_only(cost, x, p - ek - el, xbar0)
            sec = (app - apm - amp + amm) / (4.0 * step ** 2)
            T[:, :, k, l] = sec
            T[:, :, l, k] = sec
    return T


def tensor_form(T: np.ndarray, V: np.ndarray, eta: np.ndarray) -> float:
    return float(np.einsum("ijkl,i,j,k,l->", T, V, V, eta, eta))


def _tensor_grads(T, V, eta):
    gV = 2.0 * np.einsum("ijkl,j,k,l->i", T, V, eta, eta)
    gE = 2.0 * np.einsum("ijkl,i,j,l->k", T, V, V, eta)
    return gV, gE


def _normalize(v):
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def _minimize_tensor(T: np.ndarray, constrained: bool, rng: np.random.Generator,
                     restarts: int, iters: int) -> tuple[float, np.ndarray, np.ndarray, list]:
    n = T.shape[0]
    best_val = np.inf
    best_V = best_E = None
    minima = []
    for _ in range(restarts):
        V = _normalize(rng.standard_normal(n))
        eta = rng.standard_normal(n)
        if constrained:
            eta = eta - (eta @ V) * V
            while np.linalg.norm(eta) < 1e-8:
                eta = rng.standard_normal(n)
                eta = eta - (eta @ V) * V
        eta = _normalize(eta)
        val = tensor_form(T, V, eta)
        step = 0.2
        for _it in range(iters):
            gV, gE = _tensor_grads(T, V, eta)
            gV = gV - (gV @ V) * V
            gE = gE - (gE @ eta) * eta
            gnorm = np.sqrt(gV @ gV + gE @ gE)
            if gnorm < 1e-12 * (1.0 + abs(val)):
                break
            improved = False
            while step > 1e-10:
                Vc = _normalize(V - step * gV)
                Ec = eta - step * gE
                if constrained:
                    Ec = Ec - (Ec @ Vc) * Vc
                    if np.linalg.norm(Ec) < 1e-12:
                        step *= 0.5
                        continue
                Ec = _normalize(Ec)
                cand = tensor_form(T, Vc, Ec)
                if cand < val - 1e-16:
                    V, eta, val = Vc, Ec, cand
                    step = min(step * 1.5, 1.0)
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        minima.append(val)
        if val < best_val:
            best_val, best_V, best_E = val, V.copy(), eta.copy()
    return best_val, best_V, best_E, sorted(minima)


def classify(cost: CostHandle, samples: int = 32, restarts: int = 64,
             iters: int = 200, tol: float = 1e-6, seed: int = 0,
             agreement_quorum: int = 3) -> MtwReport:
    """Sampled curvature-sign verdict over random base pairs.

    classification: orthogonal-pair minimum < -tol_pair -> fails_A3w;
    within [-tol_pair, tol_pair] somewhere (and never negative) -> A3w_only;
    uniformly > tol_pair -> A3s with delta0 the worst minimum.  NNCC holds
    iff the unconstrained minimum clears -tol_pair everywhere.
    """
    rng = np.random.default_rng(seed)
    src, tgt = cost.domains.source, cost.domains.target

    pairs = []
    attempts = 0
    while len(pairs) < samples and attempts < 50 * samples:
        attempts += 1
        x = src.sample(rng, 1)[0]
        xb = tgt.sample(rng, 1)[0]
        if cost.singular_on_diagonal and \
                np.linalg.norm(x - xb) < 4.0 * cost.domains.diagonal_margin:
            continue
        pairs.append((x, xb))
    if len(pairs) < samples:
        raise InconclusiveClassification("could not sample enough valid pairs")

    # injectivity of the covector map, probed at a few sampled sources
    for x, _ in pairs[:3]:
        check_twist(cost, x, n_samples=16, seed=int(rng.integers(2 ** 31)))

    orth_min = np.inf
    unc_min = np.inf
    orth_wit = unc_wit = None
    worst_pair = None
    pair_minima = []
    worst_tol = tol
    for x, xb in pairs:
        nd = check_nondegeneracy(cost, x, xb)
        if not nd["ok"]:
            raise NondegeneracyViolation(
                f"mixed determinant {nd['det']:.3e} below floor at sampled pair")
        j = jet(cost, x, xb, order=1, check_domains=False)
        p = -j.grad_x
        pnorm = max(float(np.linalg.norm(p)), 1e-9)
        tol_pair = tol * pnorm ** (-2.0 / 3.0)
        T = mtw_tensor(cost, x, p)

        m_o, V_o, E_o, minima_o = _minimize_tensor(T, True, rng, restarts, iters)
        m_u, V_u, E_u, minima_u = _minimize_tensor(T, False, rng, restarts, iters)
        pair_minima.append({"orth": m_o, "unconstrained": m_u, "tol": tol_pair})

        agree_tol = max(10 * tol_pair, 1e-4 * (1.0 + abs(m_o)))
        if sum(1 for m in minima_o if m - m_o <= agree_tol) < agreement_quorum:
            raise InconclusiveClassification(
                f"orthogonal restarts disagree: best {m_o:.3e}, "
                f"next {minima_o[1]:.3e}")

        if m_o < orth_min:
            orth_min = m_o
            orth_wit = MtwWitness(x, xb, p, V_o, E_o, m_o)
            worst_pair = (x, xb, p)
            worst_tol = tol_pair
        if m_u < unc_min:
            unc_min = m_u
            unc_wit = MtwWitness(x, xb, p, V_u, E_u, m_u)

    if orth_min < -worst_tol:
        classification = "fails_A3w"
        delta0 = None
    elif orth_min > worst_tol:
        classification = "A3s"
        delta0 = float(orth_min)
    else:
        classification = "A3w_only"
        delta0 = None

    nncc_holds = unc_min >= -worst_tol
    x_w, xb_w, p_w = worst_pair
    aligned = float(p_w / np.linalg.norm(p_w))
    q = p_w / np.linalg.norm(p_w)
    aligned = mtw_form(cost, x_w, xb_w, q, q)

    return MtwReport(
        classification=classification,
        delta0=delta0,
        nncc_holds=bool(nncc_holds),
        nncc_witness=None if nncc_holds else unc_wit,
        orth_min=float(orth_min),
        orth_witness=orth_wit,
        aligned_value=float(aligned),
        samples=samples,
        restarts=restarts,
        tol=tol,
        pair_minima=pair_minima,
    )
