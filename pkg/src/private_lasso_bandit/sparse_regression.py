"""L1-penalized and support-restricted least squares solvers.

lasso_fit minimizes ||Y - Z theta||_2^2 + lam * ||theta||_1 by cyclic
coordinate descent on the Gram formulation (covariance updates), which
makes per-sweep cost independent of the number of rows.  restricted_l2_fit
solves the ridge-stabilized normal equations on a fixed support, as used
with the noisy Gram statistics from the aggregation tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegressionProblem:
    """Design matrix (t x d), responses (t,), l1 weight, l2-ball radius."""

    design: np.ndarray
    response: np.ndarray
    lam: float = 0.0
    radius: float = np.inf

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.response = np.asarray(self.response, dtype=float).ravel()
        if self.design.shape[0] != self.response.shape[0]:
            raise ValueError("design and response row counts differ")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class LassoResult:
    theta: np.ndarray
    converged: bool
    kkt: float
    n_sweeps: int
    projected: bool
    objective: float
    objectives: list = field(default_factory=list)


def _soft_threshold(x: float, a: float) -> float:
    if x > a:
        return x - a
    if x < -a:
        return x + a
    return 0.0


def _kkt_from_gradient(grad: np.ndarray, theta: np.ndarray, lam: float) -> float:
    # grad = Z^T (Z theta - Y); stationarity works with 2*grad.
    g2 = 2.0 * grad
    active = theta != 0.0
    viol_inactive = np.maximum(np.abs(g2[~active]) - lam, 0.0)
    viol_active = np.abs(g2[active] + lam * np.sign(theta[active]))
    worst = 0.0
    if viol_inactive.size:
        worst = max(worst, float(viol_inactive.max()))
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    return worst


def lasso_fit(
    problem: RegressionProblem,
    tol: float = 1e-6,
    max_iters: int | None = None,
    warm_start: np.ndarray | None = None,
    record_objectives: bool = False,
) -> LassoResult:
    """Cyclic coordinate descent for the l1-penalized squared loss.

    Convergence is declared when the worst coordinatewise KKT violation
    (|2 z_j^T (Z theta - Y)| <= lam + tol for inactive coordinates,
    = -lam * sign(theta_j) within tol for active ones) drops to tol.
    max_iters counts coordinate updates and defaults to 1e4 * d.  If the
    final iterate leaves the radius ball it is rescaled onto it and
    `projected` is set; the reported KKT residual refers to the
    unprojected iterate.  Non-convergence returns the best iterate with
    converged=False rather than raising.
    """
    Z, y, lam = problem.design, problem.response, problem.lam
    t, d = Z.shape
    if t < 1:
        raise ValueError("need at least one observation")
    G = Z.T @ Z
    c = Z.T @ y
    y2 = float(y @ y)
    diag = np.ascontiguousarray(np.diag(G))

    theta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)
    grad = G @ theta - c

    if max_iters is None:
        max_iters = 10_000 * d
    sweeps = max(1, max_iters // d)

    def objective() -> float:
        return float(theta @ (grad - c) + y2 + lam * np.abs(theta).sum())

    objectives = [objective()] if record_objectives else []
    converged = False
    kkt = _kkt_from_gradient(grad, theta, lam)
    if kkt <= tol:
        converged = True
        sweeps_done = 0
    else:
        sweeps_done = 0
        half_lam = 0.5 * lam
        for sweep in range(sweeps):
            for j in range(d):
                gjj = diag[j]
                if gjj == 0.0:
                    continue
                old = theta[j]
                rho = gjj * old - grad[j]
                new = _soft_threshold(rho, half_lam) / gjj
                if new != old:
                    grad += G[:, j] * (new - old)
                    theta[j] = new
            sweeps_done = sweep + 1
            if record_objectives:
                objectives.append(objective())
            kkt = _kkt_from_gradient(grad, theta, lam)
            if kkt <= tol:
                converged = True
                break

    obj = objective()
    norm = float(np.linalg.norm(theta))
    projected = norm > problem.radius
    if projected:
        theta = theta * (problem.radius / norm)
    return LassoResult(
        theta=theta,
        converged=converged,
        kkt=kkt,
        n_sweeps=sweeps_done,
        projected=projected,
        objective=obj,
        objectives=objectives,
    )


def kkt_residual(problem: RegressionProblem, theta: np.ndarray) -> float:
    """Maximum coordinatewise KKT violation of theta for the problem."""
    theta = np.asarray(theta, dtype=float)
    grad = problem.design.T @ (problem.design @ theta - problem.response)
    return _kkt_from_gradient(grad, theta, problem.lam)


@dataclass(frozen=True)
class RestrictedGram:
    """Support-restricted normal-equation data.

    V is the |S| x |S| Gram block, u the restricted moment vector
    sum x_s r_s, count the number of rounds behind the statistics.
    support/dim carry the index set and ambient dimension so fits can be
    re-embedded as length-d vectors.
    """

    V: np.ndarray
    u: np.ndarray
    count: int
    support: tuple[int, ...]
    dim: int


def restricted_l2_fit(
    gram: RestrictedGram, c_theta: float, ridge: float | None = None
) -> np.ndarray:
    """Solve (V + ridge*I) w = u on the support, rescale into the
    c_theta ball, and embed as a length-dim vector (zeros off-support).

    ridge defaults to 1e-6 * trace(V)/|S| (floored away from zero) since
    noisy Gram blocks can be ill-conditioned.
    """
    m = len(gram.support)
    if m < 1:
        raise ValueError("empty support")
    V = np.asarray(gram.V, dtype=float)
    u = np.asarray(gram.u, dtype=float)
    if ridge is None:
        ridge = max(1e-6 * float(np.trace(V)) / m, 1e-12)
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    w = np.linalg.solve(V + ridge * np.eye(m), u)
    norm = float(np.linalg.norm(w))
    if norm > c_theta:
        w = w * (c_theta / norm)
    theta = np.zeros(gram.dim)
    theta[list(gram.support)] = w
    return theta
