"""
Fully-corrective pattern selection.

Each outer step adds the pattern picked by the linear oracle to a working set
and re-solves the relaxation restricted to that working set. The restricted
problem is small (a few dozen patterns), so it is handed to an interior-point
conic solver and then polished with Frank-Wolfe steps until its own gap
certificate is below the inner tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .fw_solver import (Allocation, DegenerateAllocationError, SolverError, SolverOptions,
                        SolverResult, _FusedLMO, _tensor, _weights, frank_wolfe,
                        initial_allocation, utility_of_rates)

log = logging.getLogger(__name__)

POLISH_ITERS = 50_000


class InnerSolveError(SolverError):
    pass


@dataclass(frozen=True)
class RestrictedProblem:
    """Relaxation restricted to ``pattern_subset`` (indices into the candidate set)."""

    pattern_subset: tuple

    def __post_init__(self):
        sub = tuple(int(i) for i in self.pattern_subset)
        object.__setattr__(self, "pattern_subset", sub)
        if not sub:
            raise ValueError("restricted problem needs at least one pattern")
        if len(set(sub)) != len(sub):
            raise ValueError("duplicate patterns in subset")

    def rates(self, rates) -> np.ndarray:
        return _tensor(rates)[:, :, list(self.pattern_subset)]


def _conic_solve(r: np.ndarray, w: np.ndarray):
    """Interior-point solve of the restricted relaxation; returns dense (alpha, pi) or None."""
    import cvxpy as cp

    K, B, S = r.shape
    scale = r.max()
    idx = np.argwhere(r > 0)  # entries that can carry rate
    n = idx.shape[0]
    vals = r[idx[:, 0], idx[:, 1], idx[:, 2]] / scale
    A = sp.csr_matrix((vals, (idx[:, 0], np.arange(n))), shape=(K, n))
    row = idx[:, 1] * S + idx[:, 2]
    C = sp.csr_matrix((np.ones(n), (row, np.arange(n))), shape=(B * S, n))
    E = sp.csr_matrix((np.ones(B * S), (np.arange(B * S), np.tile(np.arange(S), B))),
                      shape=(B * S, S))
    x = cp.Variable(n, nonneg=True)
    pi = cp.Variable(S, nonneg=True)
    prob = cp.Problem(cp.Maximize(w @ cp.log(A @ x)),
                      [C @ x <= E @ pi, cp.sum(pi) == 1])
    try:
        prob.solve(solver=cp.CLARABEL)
    except (cp.error.SolverError, ValueError) as e:  # pragma: no cover - solver specific
        log.debug("conic solve failed: %s", e)
        return None
    if x.value is None or pi.value is None:
        return None
    alpha = np.zeros((K, B, S))
    alpha[idx[:, 0], idx[:, 1], idx[:, 2]] = np.maximum(x.value, 0.0)
    return alpha, np.maximum(pi.value, 0.0)


def _repair(alpha: np.ndarray, pi: np.ndarray) -> Allocation:
    """Map a slightly inexact solver output onto X with every used cell fully loaded.

    Overloaded cells are scaled down; underloaded ones are scaled up, which
    can only raise user rates.
    """
    pi = np.maximum(pi, 0.0)
    pi = pi / pi.sum()
    alpha = np.maximum(alpha, 0.0)
    load = alpha.sum(axis=0)  # B x S
    used = load > 0
    f = np.ones_like(load)
    f[used] = pi[np.nonzero(used)[1]] / load[used]
    return Allocation(pi, np.arange(pi.size), alpha * f[None, :, :])


def _crossover(alloc: Allocation, r: np.ndarray, w: np.ndarray, delta: float = 1e-3) -> Allocation:
    """Zero the entries an optimum cannot use, judged by the KKT prices at ``alloc``.

    Interior-point output keeps every variable slightly positive. At an
    optimum ``alpha_kbi > 0`` only where ``w_k r_kbi / R_k`` attains the cell
    price ``mu_bi = max_k w_k r_kbi / R_k``, and ``pi_i > 0`` only where
    ``sum_b mu_bi`` attains its maximum over patterns. Entries missing these
    by a relative margin ``delta`` are removed; the shares are renormalized.
    """
    R = alloc.user_rates(r)
    if np.any(R <= 0):
        return alloc
    rs = r[:, :, alloc.support]
    marg = (w / R)[:, None, None] * rs
    mu = marg.max(axis=0)  # B x S
    a = np.where(marg >= (1.0 - delta) * mu[None], alloc.alpha_s, 0.0)
    pat_val = mu.sum(axis=0)
    keep = pat_val >= (1.0 - delta) * pat_val.max()
    pi = alloc.pi.copy()
    pi[alloc.support[~keep]] = 0.0
    a[:, :, ~keep] = 0.0
    s = pi.sum()
    out = Allocation(pi / s, alloc.support, a / s).prune()
    if utility_of_rates(out.user_rates(r), w) == -np.inf:
        return alloc
    return out


def _embed(alloc_sub: Allocation, subset: Sequence[int], I: int) -> Allocation:
    sub = np.asarray(subset, dtype=np.int64)
    pi = np.zeros(I)
    pi[sub[alloc_sub.support]] = alloc_sub.pi[alloc_sub.support]
    order = np.argsort(sub[alloc_sub.support])
    return Allocation(pi, sub[alloc_sub.support][order], alloc_sub.alpha_s[:, :, order])


def _restrict(alloc: Allocation, subset: Sequence[int]) -> Allocation:
    sub = list(subset)
    pos = {i: j for j, i in enumerate(sub)}
    K, B, _ = alloc.alpha_s.shape
    a = np.zeros((K, B, len(sub)))
    pi = np.zeros(len(sub))
    for j, i in enumerate(alloc.support):
        if int(i) not in pos:
            raise ValueError("allocation not supported on the subset")
        a[:, :, pos[int(i)]] = alloc.alpha_s[:, :, j]
        pi[pos[int(i)]] = alloc.pi[i]
    return Allocation(pi, np.arange(len(sub)), a)


def restricted_solve(rates, subset: RestrictedProblem, weights=None, inner_epsilon: float = 0.1,
                     init: Optional[Allocation] = None, opts: Optional[SolverOptions] = None,
                     use_conic: bool = True) -> Allocation:
    """Solve the relaxation over the patterns in ``subset`` to gap <= ``inner_epsilon``.

    Returns an allocation indexed over the full candidate set. ``init`` (if
    given) must be supported on the subset; the result is never worse than it.

    Raises
    ------
    InnerSolveError
        If the certificate is not reached within the polishing budget.
    """
    opts = opts or SolverOptions(epsilon=inner_epsilon)
    r_full = _tensor(rates)
    K, B, I = r_full.shape
    w = _weights(weights, K)
    sub = list(subset.pattern_subset)
    r = r_full[:, :, sub]
    if np.any(~np.any(r > 0, axis=(1, 2))):
        raise DegenerateAllocationError("some user has zero rate on every pattern of the subset")

    candidates = []
    if init is not None:
        candidates.append(_restrict(init, sub))
    if use_conic:
        sol = _conic_solve(r, w)
        if sol is not None:
            candidates.append(_crossover(_repair(*sol), r, w))
    if not candidates:
        candidates.append(initial_allocation(r, 0))
    scored = [(utility_of_rates(c.user_rates(r), w), n, c) for n, c in enumerate(candidates)]
    start = max(scored, key=lambda t: (t[0], t[1]))[2]
    if not np.isfinite(utility_of_rates(start.user_rates(r), w)):
        start = initial_allocation(r, 0)

    polish_opts = SolverOptions(epsilon=inner_epsilon, gamma0=opts.gamma0, beta=opts.beta,
                                kappa=opts.kappa, max_iters=POLISH_ITERS,
                                check_feasibility=False)
    res = frank_wolfe(r, w, polish_opts, start, inner_epsilon, POLISH_ITERS)
    out = _embed(res.allocation, sub, I)
    if not res.certified:
        raise InnerSolveError(
            f"restricted solve stopped with gap {res.gap:.4g} > {inner_epsilon:.4g}", out)
    return out


def solve_relaxed_fc(rates, weights=None, opts: SolverOptions = None,
                     init: Optional[Allocation] = None, use_conic: bool = True) -> SolverResult:
    """Fully-corrective variant: LMO over all candidates, exact re-solve over the
    patterns found so far, until the full-set gap is at most ``opts.epsilon``."""
    opts = opts or SolverOptions()
    r = _tensor(rates)
    K, B, I = r.shape
    w = _weights(weights, K)
    zero = np.flatnonzero(~np.any(r > 0, axis=(1, 2)))
    if zero.size:
        raise DegenerateAllocationError(f"users {zero.tolist()} have zero rate everywhere")
    tol = opts.tol_for(I)
    inner_eps = opts.inner_eps
    fused = _FusedLMO(r)

    alloc = init.copy() if init is not None else initial_allocation(rates)
    working = [int(i) for i in alloc.support]
    # first corrective solve over the initial support
    alloc = restricted_solve(r, RestrictedProblem(tuple(working)), w, inner_eps, alloc, opts,
                             use_conic)
    R = alloc.user_rates(r)
    U = utility_of_rates(R, w)
    trace = []
    gap = np.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        scale = w / R
        v = fused(scale)
        gap = v.value - float(np.dot(scale, R))
        trace.append((it, U, gap, 1.0 if it > 1 else 0.0,
                      int(np.count_nonzero(alloc.pi > tol)), len(working)))
        if gap <= opts.epsilon:
            break
        if v.pattern in working:
            # only possible when inner_epsilon > epsilon
            log.warning("oracle returned a pattern already in the working set")
            break
        working.append(v.pattern)
        nxt = restricted_solve(r, RestrictedProblem(tuple(working)), w, inner_eps, alloc,
                               opts, use_conic)
        R_new = nxt.user_rates(r)
        U_new = utility_of_rates(R_new, w)
        if U_new < U:
            log.debug("corrective step lowered utility by %.3e; keeping previous iterate",
                      U - U_new)
            nxt, R_new, U_new = alloc, R, U
        alloc, R, U = nxt, R_new, U_new
        if opts.check_feasibility:
            alloc.assert_feasible()
    if it > 2 * K:
        log.warning("fully-corrective solve needed %d outer iterations (> 2K = %d)", it, 2 * K)
    certified = bool(gap <= opts.epsilon)
    if not certified:
        log.warning("fully-corrective solve stopped with gap %.4g > %.4g", gap, opts.epsilon)
    return SolverResult(alloc, U, float(gap), it, alloc.active_patterns(tol), certified, trace)
