"""Euler integration kernels for noisy Kuramoto phase dynamics.

The hot inner loops live here in two flavors: numba ``@njit`` kernels and
pure-numpy fallbacks. The active backend is chosen at import time from the
``KABI_BACKEND`` environment variable (``"numba"`` or ``"numpy"``); the
default is numba when it imports cleanly. Both flavors share one contract:

    simulate_*(psi0, omega, ..., dt, n_steps, subsample)
        -> (observations, diverged_step)

``observations`` is an ``(n_steps // subsample + 1, N)`` array of true
(noise-free, unwrapped) phases sampled at t = 0, T*dt, 2T*dt, ...;
``diverged_step`` is -1 on success, else the 1-based step index at which a
non-finite phase first appeared (rows from that point on are garbage and
the caller must raise).

Observation noise is deliberately NOT applied here: it belongs to the
caller's RNG stream so that kernels stay deterministic pure functions.
"""

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "HAVE_NUMBA",
    "simulate_pairwise",
    "simulate_meanfield",
    "simulate_complex",
    "get_kernels",
]


# ---------------------------------------------------------------------------
# pure numpy fallbacks
# ---------------------------------------------------------------------------

def simulate_pairwise_np(psi0, omega, kappa, dt, n_steps, subsample):
    n = psi0.shape[0]
    out = np.empty((n_steps // subsample + 1, n))
    psi = psi0.copy()
    out[0] = psi
    row = 1
    for step in range(1, n_steps + 1):
        diff = psi[None, :] - psi[:, None]
        drift = omega + (kappa / n) * np.sin(diff).sum(axis=1)
        psi = psi + dt * drift
        if not np.all(np.isfinite(psi)):
            return out, step
        if step % subsample == 0:
            out[row] = psi
            row += 1
    return out, -1


def simulate_meanfield_np(psi0, omega, kappa, dt, n_steps, subsample):
    n = psi0.shape[0]
    out = np.empty((n_steps // subsample + 1, n))
    psi = psi0.copy()
    out[0] = psi
    row = 1
    for step in range(1, n_steps + 1):
        s = np.sin(psi)
        c = np.cos(psi)
        ms = s.mean()
        mc = c.mean()
        # r * sin(Psi - psi_i) expanded through r*sin(Psi)=ms, r*cos(Psi)=mc
        psi = psi + dt * (omega + kappa * (ms * c - mc * s))
        if not np.all(np.isfinite(psi)):
            return out, step
        if step % subsample == 0:
            out[row] = psi
            row += 1
    return out, -1


def simulate_complex_np(psi0, omega, weights, dt, n_steps, subsample):
    # weights = couplings * adjacency, zero diagonal
    n = psi0.shape[0]
    out = np.empty((n_steps // subsample + 1, n))
    psi = psi0.copy()
    out[0] = psi
    row = 1
    for step in range(1, n_steps + 1):
        diff = psi[None, :] - psi[:, None]
        drift = omega + (weights * np.sin(diff)).sum(axis=1)
        psi = psi + dt * drift
        if not np.all(np.isfinite(psi)):
            return out, step
        if step % subsample == 0:
            out[row] = psi
            row += 1
    return out, -1


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

_requested = os.environ.get("KABI_BACKEND", "").strip().lower()
HAVE_NUMBA = False

if _requested != "numpy":
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise

if HAVE_NUMBA:

    @njit(cache=True)
    def simulate_pairwise_nb(psi0, omega, kappa, dt, n_steps, subsample):
        n = psi0.shape[0]
        out = np.empty((n_steps // subsample + 1, n))
        psi = psi0.copy()
        new = np.empty(n)
        out[0] = psi
        row = 1
        for step in range(1, n_steps + 1):
            ok = True
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += np.sin(psi[j] - psi[i])
                new[i] = psi[i] + dt * (omega[i] + kappa * acc / n)
                if not np.isfinite(new[i]):
                    ok = False
            psi[:] = new
            if not ok:
                return out, step
            if step % subsample == 0:
                out[row] = psi
                row += 1
        return out, -1

    @njit(cache=True)
    def simulate_meanfield_nb(psi0, omega, kappa, dt, n_steps, subsample):
        n = psi0.shape[0]
        out = np.empty((n_steps // subsample + 1, n))
        psi = psi0.copy()
        out[0] = psi
        row = 1
        sines = np.empty(n)
        cosines = np.empty(n)
        for step in range(1, n_steps + 1):
            ms = 0.0
            mc = 0.0
            for i in range(n):
                sines[i] = np.sin(psi[i])
                cosines[i] = np.cos(psi[i])
                ms += sines[i]
                mc += cosines[i]
            ms /= n
            mc /= n
            ok = True
            # r * sin(Psi - psi_i) expanded through r*sin(Psi)=ms, r*cos(Psi)=mc
            for i in range(n):
                psi[i] = psi[i] + dt * (omega[i] + kappa * (ms * cosines[i] - mc * sines[i]))
                if not np.isfinite(psi[i]):
                    ok = False
            if not ok:
                return out, step
            if step % subsample == 0:
                out[row] = psi
                row += 1
        return out, -1

    @njit(cache=True)
    def simulate_complex_nb(psi0, omega, weights, dt, n_steps, subsample):
        n = psi0.shape[0]
        out = np.empty((n_steps // subsample + 1, n))
        psi = psi0.copy()
        new = np.empty(n)
        out[0] = psi
        row = 1
        for step in range(1, n_steps + 1):
            ok = True
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += weights[i, j] * np.sin(psi[j] - psi[i])
                new[i] = psi[i] + dt * (omega[i] + acc)
                if not np.isfinite(new[i]):
                    ok = False
            psi[:] = new
            if not ok:
                return out, step
            if step % subsample == 0:
                out[row] = psi
                row += 1
        return out, -1


ACTIVE_BACKEND = "numba" if HAVE_NUMBA else "numpy"

if HAVE_NUMBA:
    simulate_pairwise = simulate_pairwise_nb
    simulate_meanfield = simulate_meanfield_nb
    simulate_complex = simulate_complex_nb
else:
    simulate_pairwise = simulate_pairwise_np
    simulate_meanfield = simulate_meanfield_np
    simulate_complex = simulate_complex_np


def get_kernels(backend=None):
    """Return the (pairwise, meanfield, complex) kernel triple for a backend.

    ``backend=None`` gives the active default. Used by the benchmark to time
    both paths in one process.
    """
    if backend is None:
        backend = ACTIVE_BACKEND
    if backend == "numpy":
        return simulate_pairwise_np, simulate_meanfield_np, simulate_complex_np
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return simulate_pairwise_nb, simulate_meanfield_nb, simulate_complex_nb
    raise ValueError(f"unknown backend {backend!r}")
