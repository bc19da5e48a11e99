"""Generalized Brownian ensembles and their statistics.

Simulates dx = b(x,t) dt + dw with E(dw^2) = 2 nu dt by Euler-Maruyama,
estimates forward/backward drifts by conditional difference quotients,
checks the covariance structure of the driving noise, and evaluates the
discretized kinetic/action estimators in both the overlapping-increment
and the staggered-increment (non-overlapping) form.

Mass is fixed to 1 throughout; fold any mass into the potential.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numkit import NumericalError, RngStream, child_hash, key_from_hash


class EstimationError(NumericalError):
    pass


@dataclass(frozen=True)
class DriftField:
    """Drift b(x, t) tabulated on a uniform x-grid for one or more times.

    In x: piecewise linear, constant beyond the grid edges.  In t: the most
    recent stored slice at or before t (the Ito evaluation convention for
    stepping).  ``support`` marks the x-range on which values are trusted.
    """

    x_grid: np.ndarray
    values: np.ndarray          # shape (n_times, n_x)
    times: np.ndarray = None
    support: tuple = None

    def __post_init__(self):
        x = np.asarray(self.x_grid, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        times = np.array([0.0]) if self.times is None else np.atleast_1d(
            np.asarray(self.times, dtype=float))
        if x.ndim != 1 or x.size < 2:
            raise ValueError("x_grid must be a 1-D grid with >= 2 points")
        dx = np.diff(x)
        if not (np.all(dx > 0) and np.allclose(dx, dx[0], rtol=1e-9)):
            raise ValueError("x_grid must be strictly increasing and uniform")
        if vals.shape != (times.size, x.size):
            raise ValueError(f"values shape {vals.shape} does not match "
                             f"({times.size}, {x.size})")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(x))):
            raise ValueError("drift field contains non-finite entries")
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "times", times)
        if self.support is None:
            object.__setattr__(self, "support", (float(x[0]), float(x[-1])))

    @classmethod
    def from_callable(cls, x_grid, fn, times=(0.0,)):
        x = np.asarray(x_grid, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        vals = np.stack([np.asarray(fn(x, t), dtype=float) * np.ones_like(x)
                         for t in times])
        return cls(x, vals, times)

    @classmethod
    def zero(cls, x_grid):
        x = np.asarray(x_grid, dtype=float)
        return cls(x, np.zeros((1, x.size)), np.array([0.0]))

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    def slice_index(self, t):
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return min(max(idx, 0), self.times.size - 1)

    def __call__(self, x, t=0.0):
        row = self.values[self.slice_index(t)]
        return np.interp(x, self.x_grid, row)


@dataclass(frozen=True)
class DiffusionEnsemble:
    """P sample paths over T+1 uniformly spaced times."""

    nu: float
    dt: float
    times: np.ndarray
    paths: np.ndarray           # shape (P, T+1)
    seed: RngStream
    boundary_hits: int = 0
    x_span: tuple = None

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def n_steps(self):
        return self.paths.shape[1] - 1

    def index_of(self, t):
        idx = int(round((t - self.times[0]) / self.dt))
        if not 0 <= idx <= self.n_steps or abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the stored time grid")
        return idx

    def reversed(self):
        """Time-reversed view: x*(s) = x(T - s)."""
        t_total = self.times[-1] - self.times[0]
        return DiffusionEnsemble(
            nu=self.nu, dt=self.dt,
            times=self.times[0] + t_total - self.times[::-1],
            paths=self.paths[:, ::-1].copy(),
            seed=self.seed, boundary_hits=self.boundary_hits,
            x_span=self.x_span,
        )


@dataclass(frozen=True)
class ActionEstimate:
    value: float
    stderr: float
    divergent_coefficient: float = None

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")


@dataclass
class DriftEstimate:
    """Binned conditional drift estimates at one time slice."""

    t: float
    dt: float
    bin_edges: np.ndarray
    bin_centers: np.ndarray
    bin_mean_x: np.ndarray
    counts: np.ndarray
    populated: np.ndarray       # bool, count >= min_count
    forward: np.ndarray
    forward_se: np.ndarray
    backward: np.ndarray
    backward_se: np.ndarray
    density: np.ndarray         # normalized histogram of x(t)

    def forward_field(self, x_grid=None):
        return self._field(self.forward, x_grid)

    def backward_field(self, x_grid=None):
        return self._field(self.backward, x_grid)

    def _field(self, vals, x_grid):
        good = self.populated
        if not np.any(good):
            raise EstimationError("no populated bins to build a drift field from")
        centers = self.bin_centers
        filled = np.interp(centers, centers[good], vals[good])
        fld = DriftField(centers, filled[None, :], np.array([self.t]),
                         support=(float(centers[good][0]), float(centers[good][-1])))
        if x_grid is None:
            return fld
        return DriftField(np.asarray(x_grid, float),
                          np.interp(x_grid, centers, filled)[None, :],
                          np.array([self.t]), support=fld.support)


def simulate_ensemble(drift, nu, x0, dt, steps, n_paths, rng,
                      batch_size=16384):
    """Euler-Maruyama ensemble of dx = b dt + dw, E(dw^2) = 2 nu dt.

    ``x0`` is a scalar start, an array of length n_paths, or a callable
    (generator, size) -> positions.  Noise is drawn from per-path streams
    derived from (rng, path index), so the result does not depend on the
    batch schedule.  Steps taken while a path sits outside the drift grid
    are counted in boundary_hits (the drift extrapolates as a constant).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if nu < 0:
        raise ValueError("nu must be non-negative")
    lo, hi = drift.x_grid[0], drift.x_grid[-1]

    if callable(x0):
        x_init = np.asarray(x0(rng.child(0).generator(), n_paths), dtype=float)
    else:
        x_init = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()

    times = np.arange(steps + 1) * dt
    paths = np.empty((n_paths, steps + 1))
    sigma = np.sqrt(2.0 * nu * dt)
    drift_free = not np.any(drift.values)
    base_hash = rng.partial_hash()
    # one re-keyed Philox instead of a fresh bit generator per path; the
    # streams are identical to rng.child(1 + path).generator()
    bitgen = np.random.Philox(key=key_from_hash(base_hash))
    gen = np.random.Generator(bitgen)
    zero_counter = np.zeros(4, dtype=np.uint64)
    hits = 0
    for start in range(0, n_paths, batch_size):
        stop = min(start + batch_size, n_paths)
        nb = stop - start
        # per-path noise streams keyed by path index, so the result is
        # independent of the batch layout and of any parallel schedule
        incr = np.empty((nb, steps))
        for p in range(nb):
            state = bitgen.state
            state["state"]["key"] = key_from_hash(child_hash(base_hash, 1 + start + p))
            state["state"]["counter"] = zero_counter
            state["buffer_pos"] = 4
            bitgen.state = state
            incr[p] = gen.standard_normal(steps)
        incr *= sigma
        block = paths[start:stop]
        block[:, 0] = x_init[start:stop]
        if drift_free:
            np.cumsum(incr, axis=1, out=incr)
            block[:, 1:] = incr + block[:, 0, None]
        else:
            steps_first = np.ascontiguousarray(incr.T)
            walk = np.empty((steps + 1, nb))
            x = walk[0]
            x[:] = x_init[start:stop]
            for k in range(steps):
                b = drift(x, times[k])
                if not np.all(np.isfinite(b)):
                    bad = int(np.flatnonzero(~np.isfinite(b))[0])
                    raise NumericalError(
                        f"drift evaluated non-finite at x={x[bad]:.6g}, "
                        f"t={times[k]:.6g}")
                np.add(x, b * dt + steps_first[k], out=walk[k + 1])
                x = walk[k + 1]
            block[:] = walk.T
        edge = block[:, :-1]
        if edge.min() < lo or edge.max() > hi:
            hits += int(np.count_nonzero((edge < lo) | (edge > hi)))
    return DiffusionEnsemble(nu=float(nu), dt=float(dt), times=times,
                             paths=paths, seed=rng, boundary_hits=hits,
                             x_span=(float(lo), float(hi)))


def estimate_drifts(ens, t_index, n_bins=24, min_count=30, central_mass=0.99):
    """Binned forward/backward drift estimates at one interior time index.

    forward bin value: mean of (x(t+dt) - x(t))/dt given x(t) in the bin;
    backward: mean of (x(t) - x(t-dt))/dt with the same conditioning.
    Bins span the central ``central_mass`` of the empirical density; bins
    holding fewer than ``min_count`` samples are flagged unpopulated.
    """
    if not 0 < t_index < ens.n_steps:
        raise ValueError("t_index must be interior: 0 < t_index < T")
    x = ens.paths[:, t_index]
    fwd_q = (ens.paths[:, t_index + 1] - x) / ens.dt
    bwd_q = (x - ens.paths[:, t_index - 1]) / ens.dt

    tail = 0.5 * (1.0 - central_mass)
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    if hi <= lo:
        raise EstimationError("degenerate sample range; cannot bin")
    edges = np.linspace(lo, hi, n_bins + 1)
    which = np.digitize(x, edges) - 1
    inside = (which >= 0) & (which < n_bins)

    counts = np.bincount(which[inside], minlength=n_bins)
    populated = counts >= min_count
    if not np.any(populated):
        raise EstimationError("all bins empty: too few paths per bin")

    def bin_stats(q):
        mean = np.full(n_bins, np.nan)
        se = np.full(n_bins, np.nan)
        total = np.bincount(which[inside], weights=q[inside], minlength=n_bins)
        total2 = np.bincount(which[inside], weights=q[inside] ** 2, minlength=n_bins)
        good = counts > 1
        mean[good] = total[good] / counts[good]
        var = np.maximum(total2[good] / counts[good] - mean[good] ** 2, 0.0)
        se[good] = np.sqrt(var / counts[good])
        return mean, se

    fwd, fwd_se = bin_stats(fwd_q)
    bwd, bwd_se = bin_stats(bwd_q)
    mean_x = np.full(n_bins, np.nan)
    sums = np.bincount(which[inside], weights=x[inside], minlength=n_bins)
    mean_x[counts > 0] = sums[counts > 0] / counts[counts > 0]
    width = edges[1] - edges[0]
    density = counts / (counts.sum() * width)
    return DriftEstimate(
        t=float(ens.times[t_index]), dt=ens.dt, bin_edges=edges,
        bin_centers=0.5 * (edges[:-1] + edges[1:]), bin_mean_x=mean_x,
        counts=counts, populated=populated,
        forward=fwd, forward_se=fwd_se, backward=bwd, backward_se=bwd_se,
        density=density,
    )


def covariance_stats(ens, t1_index, t2_index):
    """Covariance and the two time-ordered derivative products.

    ordered_product_left: difference quotient taken at the earlier time,
    the other factor evaluated later (its limit is 2 nu for the driftless
    process).  ordered_product_right: difference quotient taken at the
    later time (limit 0).  Requires t1_index <= t2_index.
    """
    if t1_index > t2_index:
        raise ValueError("need t1_index <= t2_index")
    if t2_index + 1 > ens.n_steps:
        raise ValueError("t2_index + 1 exceeds the stored horizon")
    x1 = ens.paths[:, t1_index]
    x2 = ens.paths[:, t2_index]
    dev1 = x1 - x1.mean()
    dev2 = x2 - x2.mean()
    prod = dev1 * dev2
    n = ens.n_paths

    d_early = (ens.paths[:, t1_index + 1] - x1) / ens.dt
    late_idx = max(t2_index, t1_index + 1)
    left = d_early * ens.paths[:, late_idx]
    d_late = (ens.paths[:, t2_index + 1] - x2) / ens.dt
    right = x1 * d_late

    def mean_se(v):
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n))

    cov, cov_se = mean_se(prod)
    opl, opl_se = mean_se(left)
    opr, opr_se = mean_se(right)
    return {
        "cov": cov, "cov_se": cov_se,
        "ordered_product_left": opl, "ordered_product_left_se": opl_se,
        "ordered_product_right": opr, "ordered_product_right_se": opr_se,
    }


def kinetic_action_terms(ens, t_index):
    """Overlapping and staggered quadratic velocity estimators.

    overlapping: mean of (1/2)((x(t+dt)-x(t))/dt)^2, which carries the
    nu/dt divergence.  nonoverlapping: mean of the product of the two
    consecutive difference quotients, which does not.
    """
    if t_index + 2 > ens.n_steps:
        raise ValueError("need t_index + 2 <= number of steps")
    d1 = (ens.paths[:, t_index + 1] - ens.paths[:, t_index]) / ens.dt
    d2 = (ens.paths[:, t_index + 2] - ens.paths[:, t_index + 1]) / ens.dt
    over = 0.5 * d1 ** 2
    non = 0.5 * d1 * d2
    n = ens.n_paths
    return {
        "overlapping": float(over.mean()),
        "overlapping_se": float(over.std(ddof=1) / np.sqrt(n)),
        "nonoverlapping": float(non.mean()),
        "nonoverlapping_se": float(non.std(ddof=1) / np.sqrt(n)),
    }


def fit_divergence(dts, overlapping_values):
    """Least-squares line of the overlapping estimator against 1/dt.

    Returns (slope, intercept); the slope estimates the diffusion constant.
    """
    inv = 1.0 / np.asarray(dts, dtype=float)
    coeffs = np.polyfit(inv, np.asarray(overlapping_values, dtype=float), 1)
    return float(coeffs[0]), float(coeffs[1])


_LAGRANGIANS = ("yasue_16", "dissipative_18", "generalized_19")


def yasue_action_estimate(ens, drifts, potential, kind, beta=0.0,
                          t_slice=None):
    """Ensemble-and-time average of a two-velocity Lagrangian.

    ``drifts`` is the (forward, backward) pair of DriftFields, evaluated
    along the stored paths in place of the forward/backward difference
    quotients.  ``potential`` is a callable V(x).  Kinds:

    yasue_16        (1/4)(b^2 + b*^2) - V
    dissipative_18  (1/2) b b* - V
    generalized_19  (1/2)((b^2 + b*^2)/2 - (beta/8)(b - b*)^2) - V
    """
    if kind not in _LAGRANGIANS:
        raise ValueError(f"unknown Lagrangian kind {kind!r}")
    b_field, bstar_field = drifts
    sl = slice(None) if t_slice is None else t_slice
    xs = ens.paths[:, sl]
    ts = ens.times[sl]

    for fld, label in ((b_field, "forward"), (bstar_field, "backward")):
        lo, hi = fld.support
        outside = (xs < lo) | (xs > hi)
        if np.any(outside):
            frac = outside.mean()
            raise EstimationError(
                f"{label} drift field not populated under {frac:.2%} of the "
                f"path samples (support [{lo:.4g}, {hi:.4g}])")

    b = np.empty_like(xs)
    bs = np.empty_like(xs)
    for j, t in enumerate(ts):
        b[:, j] = b_field(xs[:, j], t)
        bs[:, j] = bstar_field(xs[:, j], t)
    v_pot = potential(xs)

    if kind == "yasue_16":
        lag = 0.25 * (b ** 2 + bs ** 2) - v_pot
    elif kind == "dissipative_18":
        lag = 0.5 * b * bs - v_pot
    else:
        lag = 0.5 * (0.5 * (b ** 2 + bs ** 2) - (beta / 8.0) * (b - bs) ** 2) - v_pot

    per_path = lag.mean(axis=1)
    return ActionEstimate(
        value=float(per_path.mean()),
        stderr=float(per_path.std(ddof=1) / np.sqrt(ens.n_paths)),
    )


def export_paths(ens, path, max_paths=None, stride=1):
    """Write `path_id,step,t,x` rows with >= 12 significant digits."""
    n = ens.n_paths if max_paths is None else min(max_paths, ens.n_paths)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "step", "t", "x"])
        for p in range(n):
            for k in range(0, ens.n_steps + 1, stride):
                writer.writerow([p, k, f"{ens.times[k]:.15g}",
                                 f"{ens.paths[p, k]:.15g}"])
