"""Low-rank + column-sparse decomposition of paired superpixel vectors.

Solves

    min ||U||_* + eps (1 - lam) ||U||_{2,1} + eps lam ||E||_{2,1}   s.t.  Phi = U + E

with an inexact augmented Lagrangian. The two non-smooth terms on U are
split through an auxiliary J = U carrying its own multiplier, so every
sub-step is a closed-form prox.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def svt(matrix, tau: float) -> np.ndarray:
    """Singular value thresholding: prox of tau * nuclear norm."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return _svt(np.asarray(matrix, dtype=np.float64), tau)[0]


def _svt(A, tau):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    return (U[:, :r] * s[:r]) @ Vt[:r], r


def col_shrink(matrix, tau: float) -> np.ndarray:
    """Column-wise shrinkage: prox of tau * l2,1 norm."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    A = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(A, axis=0)
    scale = np.zeros_like(norms)
    big = norms > tau
    scale[big] = 1.0 - tau / norms[big]
    return A * scale


def l21_norm(A) -> float:
    return float(np.linalg.norm(A, axis=0).sum())


def nuclear_norm(A) -> float:
    return float(np.linalg.svd(A, compute_uv=False).sum())


def objective(U, E, eps: float, lam: float) -> float:
    return nuclear_norm(U) + eps * (1 - lam) * l21_norm(U) + eps * lam * l21_norm(E)


@dataclass(frozen=True)
class PairedMatrix:
    """Columns interleave image 1 / image 2: [v1_0, v2_0, v1_1, v2_1, ...].

    Pair j holds the vectors tagged keys[j] = (segment_id, sub_index);
    image b (1 or 2) of pair j sits in column 2 j + b - 1.
    """

    data: np.ndarray
    keys: tuple

    def column(self, segment_id: int, sub_index: int, image: int) -> int:
        return 2 * self._lookup[(segment_id, sub_index)] + image - 1

    @property
    def _lookup(self):
        return {key: j for j, key in enumerate(self.keys)}

    def split(self):
        """Return (image-1 vectors, image-2 vectors) as (n_pairs, rows) arrays."""
        return self.data[:, 0::2].T.copy(), self.data[:, 1::2].T.copy()


def assemble_arrays(v1, v2, segment_id, sub_index) -> PairedMatrix:
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError(f"unpaired vectors: {v1.shape} vs {v2.shape}")
    n, d = v1.shape
    data = np.empty((d, 2 * n))
    data[:, 0::2] = v1.T
    data[:, 1::2] = v2.T
    keys = tuple(zip((int(s) for s in segment_id), (int(h) for h in sub_index)))
    if len(keys) != n:
        raise ValueError("tag count does not match vector count")
    return PairedMatrix(data, keys)


def assemble_phi(pairs) -> PairedMatrix:
    """Build the paired-column matrix from (image-1, image-2) PatchVector pairs."""
    pairs = list(pairs)
    for a, b in pairs:
        if (a.segment_id, a.sub_index) != (b.segment_id, b.sub_index) or \
                (a.source_image, b.source_image) != (1, 2):
            raise ValueError(f"unpaired vector at segment {a.segment_id}, sub {a.sub_index}")
    return assemble_arrays([a.values for a, _ in pairs], [b.values for _, b in pairs],
                           [a.segment_id for a, _ in pairs], [a.sub_index for a, _ in pairs])


@dataclass
class LrsdSolution:
    U: np.ndarray
    E: np.ndarray
    iterations: int
    final_residual: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def default_eps(shape) -> float:
    return 1.0 / np.sqrt(max(shape))


def solve_lrsd(phi, eps: float | None = None, lam: float = 0.5, mu0: float | None = None,
               rho: float = 1.1, tol: float = 1e-7, max_iter: int = 500,
               mu_max: float | None = None) -> LrsdSolution:
    """Inexact ALM for the low-rank / column-sparse split of `phi`.

    Iteration (penalty mu, multipliers X for Phi = U + E and Y for U = J):
        E <- col_shrink(Phi - U + X/mu, eps lam / mu)
        J <- col_shrink(U + Y/mu, eps (1 - lam) / mu)
        U <- svt((Phi - E + X/mu + J - Y/mu) / 2, 1 / (2 mu))
        X <- X + mu (Phi - U - E);  Y <- Y + mu (U - J);  mu <- min(rho mu, mu_max)
    Stops once both constraint residuals, relative to ||Phi||_F, fall below tol.
    `history` records (residual, rank(U), ||E||_{2,1}) per iteration.
    """
    P = np.asarray(getattr(phi, "data", phi), dtype=np.float64)
    if not np.all(np.isfinite(P)):
        raise ValueError("phi contains non-finite entries")
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in (0, 1]")
    if eps is None:
        eps = default_eps(P.shape)
    if eps <= 0 or rho <= 1:
        raise ValueError("eps must be positive and rho > 1")
    norm_p = np.linalg.norm(P)
    zeros = np.zeros_like(P)
    if norm_p == 0:
        return LrsdSolution(zeros, zeros.copy(), 1, 0.0, True, [(0.0, 0, 0.0)])

    sigma1 = np.linalg.norm(P, 2)
    mu = 1.25 / sigma1 if mu0 is None else mu0
    if mu_max is None:
        mu_max = mu * 1e7
    U, E, J = zeros.copy(), zeros.copy(), zeros.copy()
    X, Y = zeros.copy(), zeros.copy()
    history = []
    best = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        E = col_shrink(P - U + X / mu, eps * lam / mu)
        J = col_shrink(U + Y / mu, eps * (1 - lam) / mu)
        U, rank = _svt(0.5 * (P - E + X / mu + J - Y / mu), 0.5 / mu)
        R1 = P - U - E
        R2 = U - J
        X += mu * R1
        Y += mu * R2
        mu = min(rho * mu, mu_max)
        res = np.linalg.norm(R1) / norm_p
        res_j = np.linalg.norm(R2) / norm_p
        history.append((res, rank, l21_norm(E)))
        score = max(res, res_j)
        if best is None or score <= best[0]:
            best = (score, U, E, res)
        if score < tol:
            converged = True
            break
    if not converged:
        log.warning("LRSD did not converge in %d iterations (residual %.3g)", max_iter, best[0])
        _, U, E, res = best
    return LrsdSolution(U, E, it, float(res), converged, history)


def restore_vectors(solution: LrsdSolution, index: PairedMatrix):
    """Map the columns of U back to their pairs, discarding E.

    Returns (u1, u2, keys): (n_pairs, rows) arrays for images 1 and 2 and the
    (segment_id, sub_index) tag of each row.
    """
    U = solution.U
    if U.shape != index.data.shape:
        raise ValueError("solution and index shapes differ")
    return U[:, 0::2].T.copy(), U[:, 1::2].T.copy(), index.keys
