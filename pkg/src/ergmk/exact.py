"""Exact small-N verification: enumerate the full graph state space, build
the process's rate matrix, solve the stationary distribution from the left
null space, and compare it against the family's analytic equilibrium.

Also provides finite-time transition probabilities (uniformization) and the
embedded jump-chain consistency check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from .graphs import Graph, num_toggles
from .processes import ProcessSpec, equilibrium_log_weight, rate_vector

HARD_CAP_BITS = 20
DENSE_CUTOFF = 4096

_RESIDUAL_TOL = 1e-10


class CapExceededError(ValueError):
    """State space too large to enumerate."""


class ReducibleChainError(ValueError):
    """The positive-rate pattern is not strongly connected."""


class SolveError(RuntimeError):
    """Stationary solve failed to reach the required residual."""


@dataclass(frozen=True)
class StateSpace:
    """All 2^m graphs on n vertices, indexed by their adjacency bits."""

    n: int
    directed: bool

    def __post_init__(self):
        if self.num_bits > HARD_CAP_BITS:
            raise CapExceededError(
                f"{self.num_bits} edge variables exceed the {HARD_CAP_BITS}-bit "
                f"enumeration cap (n={self.n}, directed={self.directed})"
            )

    @property
    def num_bits(self) -> int:
        return num_toggles(self.n, self.directed)

    @property
    def size(self) -> int:
        return 1 << self.num_bits

    def graph(self, index: int) -> Graph:
        if not 0 <= index < self.size:
            raise IndexError(f"state index {index} out of range [0, {self.size})")
        return Graph.from_bits(self.n, self.directed, index)

    def index(self, g: Graph) -> int:
        if g.n != self.n or g.directed != self.directed:
            raise ValueError("graph shape does not match state space")
        return g.to_bits()


def build_rate_matrix(spec: ProcessSpec, space: StateSpace) -> sp.csr_matrix:
    """Sparse generator matrix over the enumerated states: off-diagonal
    entries are the toggle rates, the diagonal makes each row sum to zero."""
    size, m = space.size, space.num_bits
    rows = np.repeat(np.arange(size), m)
    cols = np.empty(size * m, dtype=np.int64)
    data = np.empty(size * m)
    for a in range(size):
        rates = rate_vector(spec, space.graph(a))
        base = a * m
        for k in range(m):
            cols[base + k] = a ^ (1 << k)
            data[base + k] = rates[k]
    R = sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()
    R = R + sp.diags(-np.asarray(R.sum(axis=1)).ravel())
    return R.tocsr()


def _check_irreducible(R: sp.csr_matrix) -> None:
    pattern = R.copy()
    pattern.setdiag(0)
    pattern.eliminate_zeros()
    ncomp, labels = connected_components(pattern > 0, directed=True, connection="strong")
    if ncomp != 1:
        sizes = np.bincount(labels)
        raise ReducibleChainError(
            f"rate pattern has {ncomp} strongly connected components "
            f"(sizes {sorted(sizes.tolist(), reverse=True)[:8]})"
        )


def solve_stationary(R: sp.csr_matrix, dense_cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """The unique probability vector pi with pi^T R = 0.

    Dense LU with one step of iterative refinement up to ``dense_cutoff``
    states; above that, a sparse grounded solve (one state's probability
    pinned, then normalized).
    """
    size = R.shape[0]
    _check_irreducible(R)
    if size <= dense_cutoff:
        # Replace one column of R by the all-ones normalization constraint,
        # i.e. one row of R^T, and solve A pi = e_k.
        A = R.toarray().T
        k = size - 1
        A[k, :] = 1.0
        b = np.zeros(size)
        b[k] = 1.0
        lu, piv = scipy.linalg.lu_factor(A)
        pi = scipy.linalg.lu_solve((lu, piv), b)
        pi += scipy.linalg.lu_solve((lu, piv), b - A @ pi)
    else:
        # Grounded solve keeps sparsity: fix pi_k = 1 and solve the reduced
        # transposed system for the remaining entries.
        k = size - 1
        keep = np.arange(size) != k
        B = R[keep][:, keep].T.tocsc()
        r = -np.asarray(R[[k]][:, keep].todense()).ravel()
        lu = sp.linalg.splu(B)
        x = lu.solve(r)
        x += lu.solve(r - B @ x)
        pi = np.empty(size)
        pi[keep] = x
        pi[k] = 1.0
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(pi @ R).max())
    if residual > _RESIDUAL_TOL:
        raise SolveError(f"stationary residual {residual:.3e} exceeds {_RESIDUAL_TOL:.0e}")
    return pi


def analytic_distribution(spec: ProcessSpec, space: StateSpace) -> tuple[np.ndarray, float]:
    """Normalized analytic equilibrium over the state space and its log
    normalizer."""
    logw = np.array(
        [equilibrium_log_weight(spec, space.graph(a)) for a in range(space.size)]
    )
    log_z = float(logsumexp(logw))
    return np.exp(logw - log_z), log_z


@dataclass(frozen=True)
class StationaryReport:
    pi_solved: np.ndarray
    pi_analytic: np.ndarray
    tv_distance: float
    max_rel_error: float
    log_z: float
    residual: float


def compare_equilibrium(spec: ProcessSpec, space: StateSpace) -> StationaryReport:
    """Solve the chain exactly and measure its distance from the family's
    analytic equilibrium."""
    R = build_rate_matrix(spec, space)
    pi_solved = solve_stationary(R)
    pi_analytic, log_z = analytic_distribution(spec, space)
    diff = pi_solved - pi_analytic
    return StationaryReport(
        pi_solved=pi_solved,
        pi_analytic=pi_analytic,
        tv_distance=float(0.5 * np.abs(diff).sum()),
        max_rel_error=float(np.abs(diff / pi_analytic).max()),
        log_z=log_z,
        residual=float(np.abs(pi_solved @ R).max()),
    )


def transient_distribution(
    R: sp.csr_matrix, p0: np.ndarray, t: float, tail_tol: float = 1e-12
) -> np.ndarray:
    """Distribution at time t from initial distribution p0, by uniformization
    (Poisson mixture of powers of the discretized chain)."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    p0 = np.asarray(p0, dtype=float)
    max_exit = float(-R.diagonal().min())
    if t == 0.0 or max_exit == 0.0:
        return p0.copy()
    lam = 1.05 * max_exit
    P = sp.eye(R.shape[0], format="csr") + R / lam
    mu = lam * t
    # Poisson(mu) weights computed iteratively; stop once the accumulated
    # mass reaches 1 - tail_tol.
    log_term = -mu
    weight = np.exp(log_term)
    acc_mass = weight
    v = p0.copy()
    out = weight * v
    k = 0
    while acc_mass < 1.0 - tail_tol:
        k += 1
        v = v @ P
        log_term += np.log(mu) - np.log(k)
        weight = np.exp(log_term)
        acc_mass += weight
        out += weight * v
    return out / out.sum()


def embedded_chain_check(spec: ProcessSpec, space: StateSpace) -> float:
    """Verify that the continuous chain's stationary law equals the embedded
    jump chain's stationary law reweighted by mean dwell times; returns the
    max absolute deviation between the two normalized vectors."""
    R = build_rate_matrix(spec, space)
    u = -R.diagonal()
    if np.any(u <= 0):
        raise SolveError("embedded chain undefined: some state has zero exit rate")
    # Jump-chain transition matrix, recast as a generator so the same
    # stationary solver applies: P_tilde - I has zero row sums.
    P_tilde = sp.diags(1.0 / u) @ R
    P_tilde.setdiag(0)
    Q = P_tilde + sp.diags(-np.asarray(P_tilde.sum(axis=1)).ravel())
    pi_tilde = solve_stationary(Q.tocsr())
    pi_from_jump = pi_tilde / u
    pi_from_jump /= pi_from_jump.sum()
    pi_direct = solve_stationary(R)
    return float(np.abs(pi_from_jump - pi_direct).max())
