"""The +-1 continuous-time jump process and its Monte Carlo functionals.

The process is X(t) = B * (-1)^{N(t)} with N a unit-rate Poisson process and
B a symmetric random sign ("free" boundary at t = 0).  The partition
function of the induced long-range one-dimensional Ising model is

    Z(alpha, T) = E[ exp( (alpha/2) * int_0^T int_0^T X(t) X(s) h(t-s) dt ds ) ]

and the product moments have the closed form (for increasing times)

    E[X(t_1) ... X(t_q)] = exp(-2 * [(t_2-t_1) + (t_4-t_3) + ...]),  q even,
                         = 0,                                        q odd,

which this module both implements directly and re-estimates by simulation.

The double time integral over a piecewise-constant path collapses to a
bilinear combination of the kernel's second antiderivative Phi over the
segment boundaries,

    action = -sum_{k,l} w_k w_l Phi(x_k - x_l),   w_k = sigma_{k+1} - sigma_k,

with sigma the segment signs (0 outside [0,T]); this is exact per path, so
the only Monte Carlo noise is over paths.  Estimators draw from per-batch
counter-keyed streams and reduce in fixed batch order, which makes them
bit-reproducible for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimateUnreliableError
from .kernel import Kernel
from .rng import batch_layout, batch_mean, map_batches, stream

__all__ = [
    "SpinPath",
    "MCEstimate",
    "sample_path",
    "interaction_action",
    "estimate_Z",
    "moment_closed_form",
    "estimate_moment_mc",
]

_CHUNK = 1024
_TAG_Z = 1
_TAG_MOMENT = 2
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class SpinPath:
    """One realization: initial sign and the sorted jump times on (0, horizon)."""

    initial_sign: int
    jump_times: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.initial_sign not in (-1, 1):
            raise ValueError("initial_sign must be +1 or -1")
        jt = np.asarray(self.jump_times, dtype=float)
        if jt.size and (np.any(np.diff(jt) <= 0) or jt[0] <= 0 or jt[-1] >= self.horizon):
            raise ValueError("jump times must be strictly increasing inside (0, horizon)")
        object.__setattr__(self, "jump_times", jt)

    def sign_at(self, t: float) -> int:
        flips = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.initial_sign * (-1) ** flips


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    samples: int
    seed: int


def sample_path(horizon: float, rng: np.random.Generator) -> SpinPath:
    """Draw one path: sign first, then exponential(1) waits accumulated to horizon."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    sign = int(rng.integers(0, 2)) * 2 - 1
    jumps = []
    t = rng.exponential()
    while t < horizon:
        jumps.append(t)
        t += rng.exponential()
    return SpinPath(sign, np.asarray(jumps), float(horizon))


def _boundary_weights(signs, counts, width):
    """Signed boundary weights w_k = sigma_{k+1} - sigma_k, padded with zeros."""
    n = len(signs)
    k = np.arange(width)
    alt = np.where(k % 2 == 0, 1.0, -1.0)
    w = 2.0 * signs[:, None] * alt[None, :]
    w[:, 0] = signs
    w[np.arange(n), counts + 1] *= 0.5
    w[k[None, :] > (counts[:, None] + 1)] = 0.0
    return w


def interaction_action(path: SpinPath, kernel: Kernel) -> float:
    """Exact double integral int int X(t) X(s) h(t-s) over [0, horizon]^2."""
    x = np.concatenate([[0.0], path.jump_times, [path.horizon]])
    counts = np.array([len(path.jump_times)])
    w = _boundary_weights(np.array([float(path.initial_sign)]), counts, len(x))[0]
    diffs = np.abs(x[:, None] - x[None, :])
    return -float(np.einsum("k,l,kl->", w, w, kernel.phi(diffs)))


def _jump_matrix(rng, n, horizon):
    """Poisson jump times for n paths, padded past horizon; fixed draw layout."""
    block = max(8, int(horizon + 10.0 * math.sqrt(horizon) + 20.0))
    times = np.cumsum(rng.exponential(size=(n, block)), axis=1)
    while float(times[:, -1].min()) < horizon:
        more = np.cumsum(rng.exponential(size=(n, block)), axis=1)
        times = np.concatenate([times, times[:, -1:] + more], axis=1)
    return times


def _action_chunk(kernel, signs, times, horizon, phi_tab, dx):
    counts = (times < horizon).sum(axis=1)
    m_max = int(counts.max())
    n = times.shape[0]
    x = np.empty((n, m_max + 2))
    x[:, 0] = 0.0
    cols = np.arange(m_max)
    x[:, 1 : m_max + 1] = np.where(cols[None, :] < counts[:, None], times[:, :m_max], horizon)
    x[:, m_max + 1] = horizon
    w = _boundary_weights(signs, counts, m_max + 2)
    d = np.abs(x[:, :, None] - x[:, None, :])
    pos = d / dx
    i0 = np.minimum(pos.astype(np.int64), len(phi_tab) - 2)
    frac = pos - i0
    phi = phi_tab[i0] * (1.0 - frac) + phi_tab[i0 + 1] * frac
    return -np.einsum("nkl,nk,nl->n", phi, w, w)


def estimate_Z(
    alpha: float,
    horizon: float,
    kernel: Kernel,
    samples: int,
    seed: int,
    workers: int = 1,
) -> MCEstimate:
    """Monte Carlo estimate of Z(alpha, horizon) with batch-means error bars."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    ranges = batch_layout(samples)
    phi_tab, dx = kernel.phi_dense(horizon)

    def run_batch(b):
        start, stop = ranges[b]
        rng = stream(seed, _TAG_Z, b)
        total = []
        left = stop - start
        while left > 0:
            n = min(_CHUNK, left)
            signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
            times = _jump_matrix(rng, n, horizon)
            action = _action_chunk(kernel, signs, times, horizon, phi_tab, dx)
            expo = 0.5 * alpha * action
            if float(np.max(np.abs(expo))) > _EXP_LIMIT:
                raise EstimateUnreliableError(
                    "exp overflow in Z estimate: alpha * horizon too large"
                )
            total.append(float(np.sum(np.exp(expo))))
            left -= n
        return math.fsum(total)

    sums = map_batches(run_batch, len(ranges), workers)
    value, se = batch_mean(sums, [stop - start for start, stop in ranges])
    return MCEstimate(value, se, samples, seed)


def moment_closed_form(times) -> float:
    """E[X(t_1)...X(t_q)] for strictly increasing times: exp of -2 times the
    sum of consecutive-pair gaps for even q, zero for odd q."""
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("need a 1-D tuple of at least one time")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if t.size % 2 == 1:
        return 0.0
    gaps = t[1::2] - t[0::2]
    return float(np.exp(-2.0 * gaps.sum()))


def estimate_moment_mc(times, samples: int, seed: int, workers: int = 1) -> MCEstimate:
    """Monte Carlo average of prod_i X(t_i) over simulated paths."""
    t = np.asarray(times, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    horizon = float(t[-1])
    q = t.size
    ranges = batch_layout(samples)

    def run_batch(b):
        start, stop = ranges[b]
        rng = stream(seed, _TAG_MOMENT, b)
        total = []
        left = stop - start
        while left > 0:
            n = min(8 * _CHUNK, left)
            signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
            jumps = _jump_matrix(rng, n, horizon)
            flips = np.zeros(n, dtype=np.int64)
            for ti in t:
                flips += (jumps <= ti).sum(axis=1)
            parity = 1.0 - 2.0 * (flips % 2)
            vals = parity * (signs if q % 2 else 1.0)
            total.append(float(np.sum(vals)))
            left -= n
        return math.fsum(total)

    sums = map_batches(run_batch, len(ranges), workers)
    value, se = batch_mean(sums, [stop - start for start, stop in ranges])
    return MCEstimate(value, se, samples, seed)
