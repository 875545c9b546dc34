"""Compare solve_lrsd with a generic convex solver on the planted rank-1 problem.

A 9 x 200 rank-1 matrix gets 1% large spikes; both solvers minimise the same
objective for a few values of eps. Needs cvxpy (the `test` extra).

    python3 scripts/lrsd_convex_check.py
"""
import cvxpy as cp
import numpy as np

from sarcd.lrsd import default_eps, objective, solve_lrsd


def planted(seed=0):
    rng = np.random.default_rng(seed)
    L = np.outer(rng.uniform(1, 2, 9), rng.uniform(1, 2, 200))
    n = int(0.01 * L.size)
    idx = rng.choice(L.size, n, replace=False)
    S = np.zeros(L.size)
    S[idx] = rng.choice([-1, 1], n) * rng.uniform(10, 20, n)
    return L, S.reshape(L.shape)


def convex(P, eps, lam):
    U, E = cp.Variable(P.shape), cp.Variable(P.shape)
    cost = (cp.normNuc(U) + eps * (1 - lam) * cp.sum(cp.norm(U, 2, axis=0))
            + eps * lam * cp.sum(cp.norm(E, 2, axis=0)))
    prob = cp.Problem(cp.Minimize(cost), [U + E == P])
    prob.solve(solver=cp.SCS, eps=1e-9, max_iters=100_000)
    return U.value, prob.value


def main():
    L, S = planted()
    P = L + S
    lam = 0.99
    print(f"{'eps':>8} {'ours':>10} {'convex':>10} {'planted':>10} {'U err ours':>11} "
          f"{'U err cvx':>10}")
    for eps in (default_eps(P.shape), 0.5, 1.0, 2.0, 4.0):
        sol = solve_lrsd(P, eps=eps, lam=lam)
        Uc, val = convex(P, eps, lam)
        err = np.linalg.norm(sol.U - L) / np.linalg.norm(L)
        err_c = np.linalg.norm(Uc - L) / np.linalg.norm(L)
        print(f"{eps:8.4f} {objective(sol.U, sol.E, eps, lam):10.4f} {val:10.4f} "
              f"{objective(L, S, eps, lam):10.4f} {err:11.3e} {err_c:10.3e}")


if __name__ == "__main__":
    main()
