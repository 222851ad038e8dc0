"""Discrete-time LQR machinery and the local-linearization baseline.

The Riccati solver is a plain fixed-point iteration of the DARE map

    P <- A^T P A - A^T P B (B^T P B + R)^-1 B^T P A + Q

started from P = Q, with symmetrization every sweep. That converges linearly
at the square of the closed-loop spectral radius, which is plenty for the
small systems here, and it keeps the solver i.e. the thing the controller
actually trusts, easy to audit. Success requires both the fixed point and a
strictly stable closed loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics


class DareSolverError(RuntimeError):
    """Riccati iteration failed. Carries the last residual seen."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class LqrWeights:
    """Quadratic cost pieces. q_g weighs the latent, q_x the raw state, r the
    action. q_g is usually the PSD projection of a trained cost matrix."""
    q_g: np.ndarray
    r: np.ndarray
    q_x: np.ndarray


@dataclass
class DareSolution:
    p: np.ndarray
    gain: np.ndarray
    iterations: int
    residual: float
    closed_loop_radius: float


def spectral_radius(m):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(m, dtype=np.float64)))))


def solve_dare(a, b, q, r, tol=1e-10, max_iter=10000):
    """Fixed-point DARE solve; returns solution with the LQR gain attached.

    Raises DareSolverError if the iteration does not reach `tol` (max-norm of
    the update) within `max_iter` sweeps, or if the resulting closed loop
    A - B K is not strictly stable."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ValueError("A must be square and B row-compatible with A")

    p = q.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            btp = b.T @ p
            gain_term = np.linalg.solve(btp @ b + r, btp @ a)
            p_next = a.T @ p @ a - (a.T @ p @ b) @ gain_term + q
            p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise DareSolverError(
                f"Riccati iterate diverged after {it} sweeps "
                "(system not stabilizable?)", residual=np.inf, iterations=it)
        residual = float(np.max(np.abs(p_next - p)))
        if residual < tol:
            # the update IS the defect of the current iterate, so return
            # that one; the defect of p_next is unmeasured and transients
            # of the non-normal map can push it back above tol
            gain = lqr_gain(p, a, b, r)
            rho = spectral_radius(a - b @ gain)
            if rho >= 1.0:
                raise DareSolverError(
                    f"converged Riccati point is not stabilizing (rho={rho:.6f})",
                    residual=residual, iterations=it)
            return DareSolution(p=p, gain=gain, iterations=it,
                                residual=residual, closed_loop_radius=rho)
        p = p_next
    raise DareSolverError(
        f"no convergence after {max_iter} iterations (residual {residual:.3e})",
        residual=residual, iterations=max_iter)


def lqr_gain(p, a, b, r):
    """K = (R + B^T P B)^-1 B^T P A."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    btp = b.T @ p
    return np.linalg.solve(btp @ b + r, btp @ a)


def dare_residual(p, a, b, q, r):
    """Max-norm defect of P against the DARE map; zero at the fixed point."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    btp = b.T @ p
    rhs = a.T @ p @ a - (a.T @ p @ b) @ np.linalg.solve(btp @ b + r, btp @ a) + q
    return float(np.max(np.abs(rhs - p)))


def optimal_action(gain, latent):
    """u = -K z for a latent (or state) vector."""
    return -np.asarray(gain, dtype=np.float64) @ np.asarray(latent, dtype=np.float64)


@dataclass
class JacobianController:
    """LQR on the forward-Euler discretized linearization at the origin.

    This is the baseline the learned controller is compared against: it is
    exact at the operating point and progressively wrong away from it (the
    pole's control authority even flips sign once the angle passes pi/2).
    """
    gain: np.ndarray
    a_d: np.ndarray = field(repr=False)
    b_d: np.ndarray = field(repr=False)

    def action(self, state):
        return optimal_action(self.gain, state)


def build_jacobian_controller(params, integrator, weights):
    """Linearize the cart-pole at the origin, discretize with forward Euler
    (A_d = I + tau_o A_c, B_d = tau_o B_c), and solve the DARE on (q_x, r)."""

    def f(x, u):
        return dynamics.cartpole_derivative(x, u, params)

    a_c, b_c = dynamics.numeric_jacobian(
        f, np.zeros(dynamics.STATE_DIM), np.zeros(dynamics.ACTION_DIM))
    a_d = np.eye(dynamics.STATE_DIM) + integrator.tau_o * a_c
    b_d = integrator.tau_o * b_c
    sol = solve_dare(a_d, b_d, weights.q_x, weights.r)
    return JacobianController(gain=sol.gain, a_d=a_d, b_d=b_d)
