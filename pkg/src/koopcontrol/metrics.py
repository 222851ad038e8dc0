"""Evaluation metrics: prediction NRMSE, control cost, loss-run bookkeeping."""

from __future__ import annotations

import numpy as np


class UndefinedNormalizationError(ValueError):
    """The observed window has zero range, so NRMSE is undefined."""


def _window(a, m_p):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] < m_p:
        raise ValueError(f"need at least {m_p} rows, got {a.shape[0]}")
    return a[:m_p]


def nrmse(predicted, observed, m_p):
    """Normalized RMSE in percent over an m_p-step window.

    100 * sqrt(mean_m ||pred_m - obs_m||^2) / ||max(obs) - min(obs)||_2,
    with the max/min taken element-wise over the observed window. Both
    inputs are aligned sequences whose first row is the first predicted
    step; pass pre-shifted arrays to move the window."""
    pred = _window(predicted, m_p)
    obs = _window(observed, m_p)
    if pred.shape != obs.shape:
        raise ValueError("predicted/observed shapes disagree")
    rng_vec = obs.max(axis=0) - obs.min(axis=0)
    denom = float(np.linalg.norm(rng_vec))
    if denom == 0.0:
        raise UndefinedNormalizationError("observed window has zero range")
    rms = np.sqrt(np.mean(np.sum((pred - obs) ** 2, axis=1)))
    return 100.0 * float(rms) / denom


def msce(states, desired, m_p=None):
    """Mean squared control error (1/M_p) sum_m ||x_m - x_d||^2."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if m_p is None:
        m_p = states.shape[0]
    states = _window(states, m_p)
    desired = np.asarray(desired, dtype=np.float64).ravel()
    return float(np.mean(np.sum((states - desired) ** 2, axis=1)))


def consecutive_lost(delivered_flags):
    """Longest run of losses before the most recent delivery.

    Takes per-packet delivered booleans in transmission order. Losses after
    the last delivery do not count (the run is still open); a sequence with
    no delivery at all counts in full."""
    flags = [bool(f) for f in delivered_flags]
    if not flags:
        return 0
    if not any(flags):
        return len(flags)
    last_ok = max(i for i, f in enumerate(flags) if f)
    longest = 0
    run = 0
    for f in flags[:last_ok + 1]:
        if f:
            run = 0
        else:
            run += 1
            longest = max(longest, run)
    return longest
