"""Constrained trust-region subproblem: CG, KL-Hessian products, dual solves.

The per-agent update step solves

    max_d  G.d   s.t.  D_j + B_j.d <= 0  for all j,   0.5 d'Ed <= delta

where E is the KL Hessian at the current parameters, applied only through
matrix-vector products. All E-inverse geometry is reduced to the Gram values
q = G'E^-1 G, r_j = B_j'E^-1 G, S_jk = B_j'E^-1 B_k once CG has produced
E^-1 G and E^-1 B_j, so dual iterations cost m-dimensional algebra only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericalError
from .nets import bind_params
from .tensor import Tensor

EPS = 1e-12


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    max_iters: int = 10,
    residual_tol: float = 1e-10,
) -> np.ndarray:
    """Solve E x = b for symmetric positive definite E."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdotr = float(r @ r)
    if rdotr == 0.0:
        return x
    for _ in range(max_iters):
        z = matvec(p)
        if not np.all(np.isfinite(z)):
            raise NumericalError("non-finite matrix-vector product in CG")
        pz = float(p @ z)
        if pz <= 0.0:
            break  # numerical loss of positive definiteness; keep current x
        alpha = rdotr / pz
        x += alpha * p
        r -= alpha * z
        new_rdotr = float(r @ r)
        if new_rdotr < residual_tol * max(1.0, float(b @ b)):
            break
        p = r + (new_rdotr / rdotr) * p
        rdotr = new_rdotr
    return x


# ---------------------------------------------------------------------------
# KL-Hessian (Fisher) vector products


def fisher_vector_product(
    kl_builder: Callable[[dict[str, Tensor]], Tensor],
    param_arrays: dict[str, np.ndarray],
    v: np.ndarray,
    damping: float = 0.1,
) -> np.ndarray:
    """(Hessian of mean KL) @ v + damping * v via double backward.

    kl_builder receives freshly bound parameter tensors and must return the
    scalar mean KL between a frozen snapshot and those parameters.
    """
    with T.Tape():
        pt = bind_params(param_arrays, requires_grad=True)
        kl = kl_builder(pt)
        leaves = list(pt.values())
        grads = T.backward(kl, leaves, create_graph=True)
        offset = 0
        gv = None
        for leaf, grad in zip(leaves, grads):
            n = leaf.data.size
            seg = Tensor(v[offset : offset + n].reshape(leaf.data.shape))
            term = T.sum_(T.mul(grad, seg))
            gv = term if gv is None else T.add(gv, term)
            offset += n
        if offset != v.size:
            raise ContractError("vector length does not match parameters")
        hvs = T.backward(gv, leaves)
    flat = np.concatenate([h.data.reshape(-1) for h in hvs])
    if not np.all(np.isfinite(flat)):
        raise NumericalError("non-finite Fisher-vector product")
    return flat + damping * v


def fvp_finite_difference(
    kl_grad: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    v: np.ndarray,
    damping: float = 0.1,
    h: float = 1e-6,
) -> np.ndarray:
    """Central-difference fallback: d/dt grad KL(theta + t v) at t=0."""
    scale = h / max(1e-12, float(np.linalg.norm(v)))
    gp = kl_grad(theta + scale * v)
    gm = kl_grad(theta - scale * v)
    return (gp - gm) / (2.0 * scale) + damping * v


# ---------------------------------------------------------------------------
# subproblem


@dataclass
class SubproblemData:
    objective_grad: np.ndarray  # G
    constraint_grads: list[np.ndarray]  # B_j
    slacks: np.ndarray  # D_j (positive means violated)
    trust_radius: float  # delta
    matvec: Callable[[np.ndarray], np.ndarray]  # damped KL-Hessian product
    cg_iters: int = 10


@dataclass
class SubproblemResult:
    step: np.ndarray
    lam: np.ndarray
    nu: float
    feasible: bool
    objective: float  # G . step
    method: str
    expected_kl: float = 0.0  # 0.5 step'E step estimated in the Gram geometry


@dataclass
class _Gram:
    q: float
    r: np.ndarray  # [m]
    S: np.ndarray  # [m, m]
    u0: np.ndarray
    U: np.ndarray  # [m, n_params]


def _gram(data: SubproblemData) -> _Gram:
    G = data.objective_grad
    m = len(data.constraint_grads)
    u0 = conjugate_gradient(data.matvec, G, data.cg_iters)
    U = np.zeros((m, G.size))
    for j, bj in enumerate(data.constraint_grads):
        U[j] = conjugate_gradient(data.matvec, bj, data.cg_iters)
    q = float(G @ u0)
    r = np.array([float(bj @ u0) for bj in data.constraint_grads])
    S = np.zeros((m, m))
    for j, bj in enumerate(data.constraint_grads):
        for k in range(m):
            S[j, k] = float(bj @ U[k])
    S = 0.5 * (S + S.T)
    return _Gram(q=max(q, 0.0), r=r, S=S, u0=u0, U=U)


def _assemble(gram: _Gram, lam: np.ndarray, delta: float) -> tuple[np.ndarray, float, float]:
    """Primal step for dual variables with the KL multiplier set analytically."""
    w_norm2 = gram.q - 2.0 * float(lam @ gram.r) + float(lam @ gram.S @ lam)
    w_norm2 = max(w_norm2, 0.0)
    nu = np.sqrt(w_norm2 / (2.0 * delta)) if w_norm2 > EPS else 0.0
    if nu <= 0.0:
        return np.zeros_like(gram.u0), 0.0, 0.0
    step = (gram.u0 - gram.U.T @ lam) / nu
    return step, nu, w_norm2


def _dual_value(gram: _Gram, lam: np.ndarray, slacks: np.ndarray, delta: float) -> float:
    w_norm2 = max(gram.q - 2.0 * float(lam @ gram.r) + float(lam @ gram.S @ lam), 0.0)
    return float(np.sqrt(2.0 * delta * w_norm2) - lam @ slacks)


def check_infeasible(gram: _Gram, slacks: np.ndarray, delta: float) -> bool:
    """A violated linearized constraint that cannot reach zero inside the region."""
    for j, d in enumerate(slacks):
        if d > 0.0:
            reach = np.sqrt(max(2.0 * delta * gram.S[j, j], 0.0))
            if d > reach + 1e-12:
                return True
    return False


def _closed_form_lambda(gram: _Gram, slack: float, delta: float) -> float:
    """Optimal single-constraint dual via the stationarity equation."""
    q, r, s = gram.q, float(gram.r[0]), float(gram.S[0, 0])
    if s <= EPS:
        return 0.0
    a_term = max(q - r * r / s, 0.0)
    b_term = 2.0 * delta - slack * slack / s
    candidates = [0.0]
    if b_term > EPS:
        lam_star = (r + slack * np.sqrt(a_term / b_term)) / s
        if lam_star > 0.0:
            candidates.append(lam_star)
    elif slack < 0.0:
        candidates = [0.0]  # ball sits inside the feasible halfspace
    else:
        candidates.append(max(r / s, 0.0))
    slacks = np.array([slack])
    best = min(candidates, key=lambda lv: _dual_value(gram, np.array([lv]), slacks, delta))
    return float(best)


def _projected_dual(
    gram: _Gram,
    slacks: np.ndarray,
    delta: float,
    iters: int,
    step_size: float,
) -> np.ndarray:
    """Projected gradient descent on the cost duals, monotone-safeguarded.

    The KL multiplier admits an exact minimizer nu(lambda) given the Gram
    values, so each iteration takes that block step analytically; a fixed
    joint (lambda, nu) step stalls on ill-conditioned instances.
    """
    m = slacks.size
    lam = np.zeros(m)

    def w_norm2_of(lam_v):
        return max(gram.q - 2.0 * float(lam_v @ gram.r) + float(lam_v @ gram.S @ lam_v), 0.0)

    def value(lam_v):
        return float(np.sqrt(2.0 * delta * w_norm2_of(lam_v)) - lam_v @ slacks)

    current = value(lam)
    base = step_size
    for _ in range(iters):
        w2 = w_norm2_of(lam)
        nu = max(np.sqrt(w2 / (2.0 * delta)), 1e-10)
        b_dot = (gram.r - gram.S @ lam) / nu  # B_j . step at the block-exact nu
        grad_lam = -(slacks + b_dot)
        eta = base
        accepted = False
        for attempt in range(40):
            lam_new = np.maximum(lam - eta * grad_lam, 0.0)
            new_val = value(lam_new)
            if new_val <= current + 1e-15 and np.any(lam_new != lam):
                if attempt == 0:
                    base = min(base * 1.5, 1e4 * step_size)
                else:
                    base = max(eta, 1e-8 * step_size)
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        if np.max(np.abs(lam_new - lam)) < 1e-13 * max(1.0, float(np.max(lam))):
            lam = lam_new
            break
        lam, current = lam_new, new_val
    return lam


def _active_set_candidates(gram: _Gram, slacks: np.ndarray, delta: float):
    """Exact KKT candidates for every subset of tight cost constraints.

    With A the tight set, the stationary step satisfies B_A d = -D_A with the
    residual objective direction E-orthogonal to span(B_A); validity requires
    nonnegative multipliers, feasible inactive constraints, and the KL budget.
    Exponential in m, intended for the small constraint counts used here.
    """
    import itertools

    m = slacks.size
    for active in itertools.chain.from_iterable(
        itertools.combinations(range(m), k) for k in range(m + 1)
    ):
        active = np.array(active, dtype=np.int64)
        if active.size == 0:
            if gram.q <= EPS:
                step = np.zeros_like(gram.u0)
                lam = np.zeros(m)
                nu = 0.0
            else:
                nu = np.sqrt(gram.q / (2.0 * delta))
                step = gram.u0 / nu
                lam = np.zeros(m)
            yield step, lam, nu
            continue
        s_aa = gram.S[np.ix_(active, active)]
        try:
            mu0 = np.linalg.solve(s_aa, gram.r[active])
            mu1 = np.linalg.solve(s_aa, slacks[active])
        except np.linalg.LinAlgError:
            continue
        a_res = max(gram.q - float(gram.r[active] @ mu0), 0.0)
        d2 = float(slacks[active] @ mu1)
        lam = np.zeros(m)
        if a_res <= EPS:
            if d2 / 2.0 > delta * (1.0 + 1e-9):
                continue
            nu = 0.0
            step = -gram.U[active].T @ mu1
            lam[active] = mu0  # multipliers up to the vanishing nu scale
        else:
            denom = 2.0 * delta - d2
            if denom <= EPS:
                continue
            nu = np.sqrt(a_res / denom)
            step = (gram.u0 - gram.U[active].T @ mu0) / nu - gram.U[active].T @ mu1
            lam[active] = mu0 + nu * mu1
        yield step, lam, nu


def _polish_active_set(
    gram: _Gram,
    slacks: np.ndarray,
    delta: float,
    objective_grad: np.ndarray,
    constraint_grads: list[np.ndarray],
    fallback: tuple[np.ndarray, np.ndarray, float],
) -> tuple[np.ndarray, np.ndarray, float]:
    best = None
    best_obj = -np.inf
    for step, lam, nu in _active_set_candidates(gram, slacks, delta):
        if np.any(lam < -1e-10):
            continue
        margins = slacks + np.array([bj @ step for bj in constraint_grads])
        if np.any(margins > 1e-8):
            continue
        obj = float(objective_grad @ step)
        if obj > best_obj:
            best_obj = obj
            best = (step, lam, nu)
    return best if best is not None else fallback


def solve_subproblem(
    data: SubproblemData,
    method: str = "auto",
    dual_iters: int = 300,
    dual_step: float = 0.1,
) -> SubproblemResult:
    """Maximize G.d inside the KL ball subject to linearized cost constraints.

    method: "auto" picks the closed form for one constraint and the projected
    dual otherwise; both are available explicitly for cross-checking.
    """
    delta = data.trust_radius
    m = len(data.constraint_grads)
    gram = _gram(data)
    slacks = np.asarray(data.slacks, dtype=np.float64)
    if slacks.shape != (m,):
        raise ContractError("one slack per constraint gradient is required")

    if check_infeasible(gram, slacks, delta):
        return SubproblemResult(
            step=np.zeros_like(data.objective_grad),
            lam=np.zeros(m),
            nu=0.0,
            feasible=False,
            objective=0.0,
            method="infeasible",
        )

    if m == 0 or (method == "auto" and m == 0):
        if gram.q <= EPS:
            return SubproblemResult(
                step=np.zeros_like(data.objective_grad),
                lam=np.zeros(0),
                nu=0.0,
                feasible=True,
                objective=0.0,
                method="trpo",
            )
        step = np.sqrt(2.0 * delta / gram.q) * gram.u0
        nu = np.sqrt(gram.q / (2.0 * delta))
        return SubproblemResult(
            step=step,
            lam=np.zeros(0),
            nu=float(nu),
            feasible=True,
            objective=float(data.objective_grad @ step),
            method="trpo",
            expected_kl=delta,
        )

    # unconstrained (TRPO) fast path when no constraint would bind
    if gram.q > EPS:
        trpo_step = np.sqrt(2.0 * delta / gram.q) * gram.u0
        margins = slacks + np.array([bj @ trpo_step for bj in data.constraint_grads])
        if np.all(margins <= 1e-12):
            return SubproblemResult(
                step=trpo_step,
                lam=np.zeros(m),
                nu=float(np.sqrt(gram.q / (2.0 * delta))),
                feasible=True,
                objective=float(data.objective_grad @ trpo_step),
                method="trpo",
                expected_kl=delta,
            )

    if method == "closed_form" or (method == "auto" and m == 1):
        if m != 1:
            raise ContractError("closed form handles exactly one constraint")
        lam = np.array([_closed_form_lambda(gram, float(slacks[0]), delta)])
        used = "closed_form"
    else:
        lam = _projected_dual(gram, slacks, delta, dual_iters, dual_step)
        used = "projected_dual"

    step, nu, w_norm2 = _assemble(gram, lam, delta)
    if used == "projected_dual":
        # Finite dual iterations leave primal slop when constraints are
        # nearly parallel; the exact KKT candidate over the identified
        # geometry removes it.
        step, lam, nu = _polish_active_set(
            gram, slacks, delta, data.objective_grad, data.constraint_grads, (step, lam, nu)
        )
    elif nu <= 0.0:
        # Slack trust region at the optimum: the active constraints pin the
        # step, so take the minimal-E-norm point satisfying them exactly.
        active = np.flatnonzero(lam > 1e-10)
        if active.size:
            s_aa = gram.S[np.ix_(active, active)]
            mu, *_ = np.linalg.lstsq(s_aa, -slacks[active], rcond=None)
            step = gram.U[active].T @ mu
        else:
            violated = np.flatnonzero(slacks > 0.0)
            if violated.size == 0:
                return SubproblemResult(
                    step=np.zeros_like(data.objective_grad),
                    lam=lam,
                    nu=0.0,
                    feasible=True,
                    objective=0.0,
                    method=used,
                )
            j = int(violated[np.argmax(slacks[violated])])
            sjj = max(gram.S[j, j], EPS)
            step = -np.sqrt(2.0 * delta / sjj) * gram.U[j]

    margins = slacks + np.array([bj @ step for bj in data.constraint_grads])
    tol = 1e-6 * max(1.0, float(np.max(np.abs(slacks))) if m else 1.0)
    feasible = bool(np.all(margins <= tol))
    return SubproblemResult(
        step=step,
        lam=lam,
        nu=float(nu),
        feasible=feasible,
        objective=float(data.objective_grad @ step),
        method=used,
        expected_kl=float(0.5 * step @ data.matvec(step)),
    )


# ---------------------------------------------------------------------------
# recovery


def recovery_weights(slacks: np.ndarray) -> np.ndarray:
    """Softmax over violated constraints only; zero elsewhere."""
    slacks = np.asarray(slacks, dtype=np.float64)
    violated = slacks > 0.0
    if not np.any(violated):
        raise ContractError("recovery weights need at least one violated constraint")
    beta = np.zeros_like(slacks)
    shifted = slacks[violated] - slacks[violated].max()
    e = np.exp(shifted)
    beta[violated] = e / e.sum()
    return beta


def recovery_direction(
    weighted_grad: np.ndarray,
    matvec: Callable[[np.ndarray], np.ndarray],
    delta: float,
    cg_iters: int = 10,
) -> np.ndarray:
    """Full natural-gradient descent step on the weighted constraint gradient."""
    norm = float(np.linalg.norm(weighted_grad))
    if norm == 0.0:
        raise ContractError("recovery requires a non-zero weighted gradient")
    u = conjugate_gradient(matvec, weighted_grad, cg_iters)
    denom = float(weighted_grad @ u)
    if denom <= EPS:
        raise NumericalError("weighted constraint gradient has no curvature support")
    return -np.sqrt(2.0 * delta / denom) * u
