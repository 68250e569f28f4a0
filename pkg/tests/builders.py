"""Hand-checkable instances and independent oracles shared by the tests."""
from __future__ import annotations

import itertools

import numpy as np

from sharedess.model import DistributedEssSpec, EssUnit, ScenarioConfig, SharedEssSpec, UserProfile


def tiny(s_max=2.0, rate=2.0, s_min=0.0, s1=0.0, grid_cap=10.0, loads=((), ())) -> ScenarioConfig:
    """Two users, three slots, lossless storage, unit price, equal weights."""
    nets = ([2.0, 0.0, -1.0], [-1.0, 0.0, 1.0])
    users = tuple(UserProfile.from_net(str(m + 1), nets[m], 1.0, 0.5, loads[m]) for m in range(2))
    shared = SharedEssSpec(s_min, s_max, s1, rate, rate, 1.0, 1.0)
    split = DistributedEssSpec((EssUnit(0.0, s_max / 2, 0.0, rate / 2, rate / 2, 1.0, 1.0),) * 2)
    return ScenarioConfig(3, users, shared, split, grid_cap)


def no_ess(rate=0.0) -> ScenarioConfig:
    return tiny(s_max=0.0, rate=rate)


# --------------------------------------------------------------------------
# vertex enumeration


def enumerate_vertices(c, A_ub, b_ub, A_eq, b_eq, lo, hi, tol=1e-7):
    """Best objective over all basic feasible solutions (bounded problems only).

    Every vertex is the unique solution of n linearly independent active
    constraints that include all equalities; we try every choice of the
    remaining n - n_eq constraints among the inequality rows and bounds.
    Returns ``None`` when no vertex is feasible.
    """
    c = np.asarray(c, float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, float).reshape(-1, n)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    eye = np.eye(n)
    G = np.vstack([A_ub, -eye, eye])
    h = np.concatenate([b_ub, -np.asarray(lo, float), np.asarray(hi, float)])
    k = n - A_eq.shape[0]
    if k < 0:
        return None
    best = None
    combos = np.array(list(itertools.combinations(range(G.shape[0]), k)), dtype=np.int64)
    combos = combos.reshape(len(combos), k)
    for chunk in np.array_split(combos, max(1, len(combos) // 20000 + 1)):
        M = np.concatenate([np.broadcast_to(A_eq, (len(chunk),) + A_eq.shape), G[chunk]], axis=1)
        r = np.concatenate([np.broadcast_to(b_eq, (len(chunk), b_eq.size)), h[chunk]], axis=1)
        ok = np.abs(np.linalg.det(M)) > 1e-9
        if not ok.any():
            continue
        x = np.linalg.solve(M[ok], r[ok][..., None])[..., 0]
        feas = np.all(x @ G.T <= h + tol, axis=1)
        if A_eq.shape[0]:
            feas &= np.all(np.abs(x @ A_eq.T - b_eq) <= tol, axis=1)
        if feas.any():
            v = float((x[feas] @ c).min())
            best = v if best is None else min(best, v)
    return best


def random_lp(rng, n_max=8, m_max=8, integer=True):
    """Random bounded LP: boxes on every variable, mixed row types."""
    n = int(rng.integers(1, n_max + 1))
    m_ub = int(rng.integers(0, m_max + 1))
    m_eq = int(rng.integers(0, min(2, n) + 1)) if rng.random() < 0.4 else 0
    draw = (lambda *s: rng.integers(-3, 4, s).astype(float)) if integer else (lambda *s: rng.uniform(-3, 3, s))
    c = draw(n)
    lo = np.where(rng.random(n) < 0.7, 0.0, -rng.integers(0, 3, n).astype(float))
    hi = lo + rng.integers(1, 6, n).astype(float)
    A_ub = draw(m_ub, n)
    x0 = lo + rng.random(n) * (hi - lo)
    # mostly feasible: right-hand sides built around an interior point
    slack = rng.integers(0, 3, m_ub).astype(float) if rng.random() < 0.85 else -rng.integers(1, 4, m_ub).astype(float)
    b_ub = np.round(A_ub @ x0) + slack
    A_eq = draw(m_eq, n)
    while m_eq and np.linalg.matrix_rank(A_eq) < m_eq:  # the oracle needs independent equalities
        A_eq = draw(m_eq, n)
    b_eq = A_eq @ x0
    return c, A_ub, b_ub, (A_eq if m_eq else None), (b_eq if m_eq else None), lo, hi


def grid_dp_cost(nets, weights, price, s1, s_max, rate, step=0.25):
    """Brute-force optimum of a lossless shared store, no loads, linear price.

    Every user chooses a net storage flow x in [-rate, rate] on a ``step``
    grid each slot (charge if positive); the state lives on the same grid
    in [0, s_max].  Dynamic programming over the state is exhaustive over
    that grid.  With ``len(nets) == 1`` this is a private unit.
    """
    nets = np.asarray(nets, float)
    M, N = nets.shape
    flows = np.round(np.arange(-rate, rate + step / 2, step), 9)
    choices = np.array(list(itertools.product(flows, repeat=M)))  # (K, M)
    inf = float("inf")
    best = {float(np.round(s1, 9)): 0.0}
    for n in range(N):
        buy = np.maximum(choices - nets[:, n], 0.0) @ (np.asarray(weights) * price)
        nxt: dict[float, float] = {}
        total = choices.sum(axis=1)
        for s, v in best.items():
            s2 = np.round(s + total, 9)
            ok = (s2 >= -1e-9) & (s2 <= s_max + 1e-9)
            for key, c in zip(s2[ok], buy[ok]):
                if v + c < nxt.get(float(key), inf):
                    nxt[float(key)] = v + c
        best = nxt
    return min(best.values())
