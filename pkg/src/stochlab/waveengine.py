"""1-D grid calculus for wave and diffusion-pair evolutions.

The module owns three kinds of state and the identities connecting them:

* ``WavefunctionGrid`` -- a complex field psi = exp(R + i S) evolved by a
  Crank-Nicolson step of the linear wave equation
  [-hbar^2/2 Lap + V] psi = i hbar d/dt psi  (mass fixed to 1).
* ``HydroFields`` -- the real fields extracted from a state: density rho,
  log-amplitude R = ln(rho)/2, phase S, osmotic velocity u = nu d/dx ln rho,
  current velocity v = hbar dS/dx, and the drift pair b = u + v,
  b* = v - u.
* ``MarkovWavePair`` -- the positive fields exp(R +- S) obeying the real
  equation pair [2 nu^2 Lap + U] exp(R +- S) = -+ 2 nu d/dt exp(R +- S).

Residual evaluators cover the two Hamilton-Jacobi variants (whose
density-dependent terms enter with opposite signs), the continuity
equation, the real pair above, and the rescaled complex equation obtained
by substituting exp(R + i S / z); phase-sensitive residuals are reported
after removing the spatial mean, since the additive time gauge of a
reconstructed phase is unobservable.

Conventions fixed here: density floor 1e-12 * max(rho) before any log or
division, with floored points excluded from residual norms; phases are
reconstructed from the left boundary (value 0 there); the phase of the
real pair is the antiderivative of v / (2 nu).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .numkit import NumericalError

FLOOR_FRACTION = 1e-12


class PhaseUnwrapError(NumericalError):
    pass


class PositivityError(NumericalError):
    pass


def _check_uniform(x):
    x = np.asarray(x, dtype=float)
    dx = np.diff(x)
    if x.ndim != 1 or x.size < 4 or not (np.all(dx > 0) and np.allclose(dx, dx[0], rtol=1e-9)):
        raise ValueError("grid must be 1-D, uniform, strictly increasing")
    return x, float(dx[0])


def grad(f, dx):
    """Central first derivative, one-sided second order at the ends."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dx)
    return out


def lap(f, dx):
    """Central second derivative, one-sided second order at the ends."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / dx ** 2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / dx ** 2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / dx ** 2
    return out


def cumint(f, dx):
    """Trapezoid antiderivative from the left boundary, value 0 there."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    np.cumsum(0.5 * (f[1:] + f[:-1]) * dx, out=out[1:])
    return out


def trapz(f, dx):
    f = np.asarray(f, dtype=float)
    return float((f.sum() - 0.5 * (f[0] + f[-1])) * dx)


def eroded_mask(mask, width=3):
    """Shrink a boolean region so derivative stencils stay off its edges."""
    out = mask.copy()
    for shift in range(1, width + 1):
        out[:-shift] &= mask[shift:]
        out[shift:] &= mask[:-shift]
    out[:width] = False
    out[-width:] = False
    return out


@dataclass(frozen=True)
class WavefunctionGrid:
    x_grid: np.ndarray
    psi: np.ndarray
    t: float = 0.0
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        x, _ = _check_uniform(self.x_grid)
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=np.complex128))
        if self.psi.shape != x.shape:
            raise ValueError("psi and x_grid shapes differ")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if self.mass != 1.0:
            raise ValueError("mass is fixed to 1; fold it into the potential")

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    def norm(self):
        return trapz(np.abs(self.psi) ** 2, self.dx)

    def normalized(self):
        return WavefunctionGrid(self.x_grid, self.psi / np.sqrt(self.norm()),
                                self.t, self.hbar)


def evolve_schrodinger(w, V, dt, steps, record=False, norm_tol=1e-6):
    """Crank-Nicolson evolution with Dirichlet ends.

    Unconditionally stable and norm-preserving to round-off on the discrete
    inner product.  Returns the final state, or the whole trajectory
    (including the initial state) when ``record`` is true.  A cumulative
    norm drift beyond ``norm_tol`` aborts.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    V = np.asarray(V, dtype=float)
    if V.shape != w.x_grid.shape or not np.all(np.isfinite(V)):
        raise ValueError("potential must be a finite field on the state grid")
    dx, hbar = w.dx, w.hbar
    n_in = w.x_grid.size - 2

    # interior tridiagonal Hamiltonian
    main = hbar ** 2 / dx ** 2 + V[1:-1]
    off = np.full(n_in - 1, -hbar ** 2 / (2.0 * dx ** 2))
    lam = 1j * dt / (2.0 * hbar)
    ab = np.zeros((3, n_in), dtype=np.complex128)   # banded (A = I + lam H)
    ab[0, 1:] = lam * off
    ab[1, :] = 1.0 + lam * main
    ab[2, :-1] = lam * off

    psi = w.psi.copy()
    psi[0] = psi[-1] = 0.0
    norm0 = trapz(np.abs(psi) ** 2, dx)
    states = [WavefunctionGrid(w.x_grid, psi.copy(), w.t, hbar)]
    cur = psi[1:-1]
    for k in range(steps):
        rhs = (1.0 - lam * main) * cur
        rhs[:-1] -= lam * off * cur[1:]
        rhs[1:] -= lam * off * cur[:-1]
        cur = solve_banded((1, 1), ab, rhs)
        if record or k == steps - 1:
            full = np.zeros_like(psi)
            full[1:-1] = cur
            states.append(WavefunctionGrid(w.x_grid, full, w.t + (k + 1) * dt, hbar))
    drift = abs(trapz(np.abs(states[-1].psi) ** 2, dx) - norm0)
    if drift > norm_tol:
        raise NumericalError(f"norm drifted by {drift:.3e} over the run")
    return states if record else states[-1]


@dataclass(frozen=True)
class HydroFields:
    x_grid: np.ndarray
    rho: np.ndarray
    R: np.ndarray
    S_phase: np.ndarray
    u: np.ndarray
    v: np.ndarray
    b: np.ndarray
    b_star: np.ndarray
    nu: float
    t: float
    above_floor: np.ndarray
    hbar: float = 1.0

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    @classmethod
    def from_density(cls, x_grid, rho, nu, v=None, b=None, t=0.0, hbar=1.0):
        """Build fields from a density plus either v or b (the other follows)."""
        x, dx = _check_uniform(x_grid)
        rho = np.asarray(rho, dtype=float)
        floor = FLOOR_FRACTION * rho.max()
        above = rho >= floor
        rho = np.maximum(rho, floor)
        rho = rho / trapz(rho, dx)
        u = nu * grad(np.log(rho), dx)
        if (v is None) == (b is None):
            raise ValueError("give exactly one of v or b")
        if v is None:
            b = np.asarray(b, dtype=float)
            v = b - u
        else:
            v = np.asarray(v, dtype=float)
            b = u + v
        return cls(x, rho, 0.5 * np.log(rho), np.zeros_like(rho), u, v, b,
                   v - u, float(nu), float(t), above, hbar)


def fields_from_wavefunction(w, nu):
    """Extract hydrodynamic fields from a complex state.

    rho is floored at 1e-12 of its maximum and renormalized; the phase is
    unwrapped along the grid and fails loudly if adjacent above-floor points
    differ by (essentially) half a turn, where the branch is ambiguous.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    dx = w.dx
    rho_raw = np.abs(w.psi) ** 2
    floor = FLOOR_FRACTION * rho_raw.max()
    above = rho_raw >= floor
    rho = np.maximum(rho_raw, floor)
    rho = rho / trapz(rho, dx)

    raw_phase = np.angle(w.psi)
    jumps = np.diff(raw_phase)
    wrapped = (jumps + np.pi) % (2.0 * np.pi) - np.pi
    risky = np.abs(wrapped) >= np.pi * (1.0 - 1e-9)
    if np.any(risky & above[:-1] & above[1:]):
        i = int(np.flatnonzero(risky & above[:-1] & above[1:])[0])
        raise PhaseUnwrapError(
            f"phase jump of half a turn between x={w.x_grid[i]:.6g} and "
            f"x={w.x_grid[i + 1]:.6g}; grid is too coarse for this state")
    S = np.empty_like(raw_phase)
    S[0] = raw_phase[0]
    np.cumsum(wrapped, out=S[1:])
    S[1:] += raw_phase[0]

    u = nu * grad(np.log(rho), dx)
    v = w.hbar * grad(S, dx)
    return HydroFields(w.x_grid, rho, 0.5 * np.log(rho), S, u, v, u + v,
                       v - u, float(nu), w.t, above, w.hbar)


def nu_from_beta(beta, hbar=1.0, m=1.0):
    """Diffusion constant of the mixed-action family: hbar/(2m)/sqrt(1-beta/2)."""
    if beta >= 2.0:
        raise ValueError("the map is undefined for beta >= 2")
    return hbar / (2.0 * m) / np.sqrt(1.0 - beta / 2.0)


def generator_apply(f, fields, direction="forward", f_dot=None):
    """Apply the forward or backward transport generator to a field.

    forward:  df/dt + b f' + nu f''
    backward: df/dt + b* f' - nu f''
    ``f_dot`` defaults to zero (stationary field); pass the time derivative
    computed from neighbouring slices otherwise.
    """
    f = np.asarray(f, dtype=float)
    dx = fields.dx
    dot = np.zeros_like(f) if f_dot is None else np.asarray(f_dot, dtype=float)
    if direction == "forward":
        return dot + fields.b * grad(f, dx) + fields.nu * lap(f, dx)
    if direction == "backward":
        return dot + fields.b_star * grad(f, dx) - fields.nu * lap(f, dx)
    raise ValueError(f"unknown direction {direction!r}")


def acceleration_fields(fields_pair):
    """Mean accelerations from two consecutive field slices.

    nelson:      (D*(b) + D(b*))/2      (mixed nesting)
    dissipative: (D(b) + D*(b*))/2      (same-direction nesting)
    beta_term:   (D - D*)^2 x = 2u (2u)' + 2 nu (2u)''
    Spatial terms are evaluated on the first slice; time derivatives use the
    forward difference of the pair.
    """
    f0, f1 = fields_pair
    dt = f1.t - f0.t
    if dt <= 0:
        raise ValueError("field slices must be in increasing time order")
    dx = f0.dx
    db_dt = (f1.b - f0.b) / dt
    dbs_dt = (f1.b_star - f0.b_star) / dt
    nelson = 0.5 * (
        generator_apply(f0.b, f0, "backward", f_dot=db_dt)
        + generator_apply(f0.b_star, f0, "forward", f_dot=dbs_dt)
    )
    dissipative = 0.5 * (
        generator_apply(f0.b, f0, "forward", f_dot=db_dt)
        + generator_apply(f0.b_star, f0, "backward", f_dot=dbs_dt)
    )
    two_u = 2.0 * f0.u
    beta_term = two_u * grad(two_u, dx) + 2.0 * f0.nu * lap(two_u, dx)
    return {"nelson": nelson, "dissipative": dissipative, "beta_term": beta_term}


def quantum_potential_term(rho, coeff, dx):
    """coeff * (sqrt(rho))'' / sqrt(rho) by central differences."""
    root = np.sqrt(np.asarray(rho, dtype=float))
    return coeff * lap(root, dx) / root


@dataclass(frozen=True)
class MarkovWavePair:
    x_grid: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    U: np.ndarray
    nu: float
    t: float = 0.0

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    @property
    def rho(self):
        return self.phi_plus * self.phi_minus

    @classmethod
    def from_hydro(cls, fields, U):
        """phi_+- = exp(R +- S) with S the antiderivative of v / (2 nu)."""
        if fields.nu <= 0:
            raise ValueError("need nu > 0 to scale the phase")
        s = cumint(fields.v / (2.0 * fields.nu), fields.dx)
        return cls(fields.x_grid, np.exp(fields.R + s), np.exp(fields.R - s),
                   np.asarray(U, dtype=float), fields.nu, fields.t)


def markov_wave_residual(pairs, fit_constant=True):
    """Residuals of [2 nu^2 Lap + U + c] phi_+- = -+ 2 nu d/dt phi_+-.

    ``pairs`` is a single pair (stationary, time term zero) or a list of
    three slices (central time difference at the middle slice).  The
    additive constant c in U is fitted jointly over both equations by least
    squares when requested.  Sup norms are taken where rho is above floor.
    """
    if isinstance(pairs, MarkovWavePair):
        mid = pairs
        dplus = np.zeros_like(mid.phi_plus)
        dminus = np.zeros_like(mid.phi_minus)
    else:
        if len(pairs) < 3:
            raise ValueError("need one pair or at least three slices")
        k = len(pairs) // 2
        mid = pairs[k]
        dt = pairs[k + 1].t - pairs[k - 1].t
        dplus = (pairs[k + 1].phi_plus - pairs[k - 1].phi_plus) / dt
        dminus = (pairs[k + 1].phi_minus - pairs[k - 1].phi_minus) / dt
    dx, nu = mid.dx, mid.nu
    base_p = 2.0 * nu ** 2 * lap(mid.phi_plus, dx) + mid.U * mid.phi_plus + 2.0 * nu * dplus
    base_m = 2.0 * nu ** 2 * lap(mid.phi_minus, dx) + mid.U * mid.phi_minus - 2.0 * nu * dminus
    rho = mid.rho
    mask = eroded_mask(rho >= FLOOR_FRACTION * rho.max())
    c = 0.0
    if fit_constant:
        w = np.concatenate([mid.phi_plus[mask], mid.phi_minus[mask]])
        r = np.concatenate([base_p[mask], base_m[mask]])
        c = -float(np.dot(w, r) / np.dot(w, w))
    res_p = base_p + c * mid.phi_plus
    res_m = base_m + c * mid.phi_minus
    return {
        "res_plus": res_p, "res_minus": res_m, "constant": c,
        "sup_plus": float(np.abs(res_p[mask]).max()),
        "sup_minus": float(np.abs(res_m[mask]).max()),
        "mask": mask,
    }


def solve_markov_wave(pair0, dt, steps, record=False, evolve_plus=True):
    """Crank-Nicolson stepping of the real equation pair.

    phi_minus obeys a forward heat equation and is unconditionally well
    posed.  phi_plus runs against the heat flow, so co-stepping it forward
    is meaningful only over horizons short compared to dx^2/(4 nu) times
    the tolerated noise amplification; pass ``evolve_plus=False`` to carry
    it frozen when only the minus branch is being driven.  Loss of
    positivity (on the region where the initial product was above floor)
    aborts with the step index.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dx, nu = pair0.dx, pair0.nu
    rho0 = pair0.rho
    watch = rho0 >= FLOOR_FRACTION * rho0.max()

    def banded_pair(sign):
        # d(phi)/dt = sign/(2 nu) [2 nu^2 Lap + U] phi on the interior,
        # boundary values held at their initial (Dirichlet) data
        mu = sign * dt / (4.0 * nu)
        diag = mu * (-4.0 * nu ** 2 / dx ** 2 + 2.0 * pair0.U[1:-1])
        off = mu * 2.0 * nu ** 2 / dx ** 2
        n_in = diag.size
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -off
        ab[1, :] = 1.0 - diag
        ab[2, :-1] = -off
        return ab, diag, off

    branches = [("phi_minus", banded_pair(+1.0))]
    if evolve_plus:
        branches.append(("phi_plus", banded_pair(-1.0)))

    phi = {"phi_plus": pair0.phi_plus.copy(), "phi_minus": pair0.phi_minus.copy()}
    traj = [pair0]
    state = pair0
    for k in range(steps):
        for name, (ab, diag, off) in branches:
            cur = phi[name]
            rhs = (1.0 + diag) * cur[1:-1]
            rhs[:-1] += off * cur[2:-1]
            rhs[1:] += off * cur[1:-2]
            rhs[0] += 2.0 * off * cur[0]
            rhs[-1] += 2.0 * off * cur[-1]
            new = cur.copy()
            new[1:-1] = solve_banded((1, 1), ab, rhs)
            if np.any(new[watch] <= 0.0):
                raise PositivityError(f"{name} lost positivity at step {k}")
            phi[name] = new
        state = MarkovWavePair(pair0.x_grid, phi["phi_plus"], phi["phi_minus"],
                               pair0.U, nu, pair0.t + (k + 1) * dt)
        if record:
            traj.append(state)
    return traj if record else state


_HJ_VARIANTS = ("schrodinger_30", "modified_40", "dissipative_42")


def hj_residual(traj, V, variant):
    """Demeaned Hamilton-Jacobi residual at the middle slice of a trajectory.

    schrodinger_30:  dS/dt + v^2/2 + V - (nu^2/2)(ln rho)'^2 - nu^2 (ln rho)''
    modified_40:     dS/dt + b^2/2 + nu b' + V        (S with gradient b)
    dissipative_42:  dS/dt + v^2/2 + V + (nu^2/2)(ln rho)'^2 + nu^2 (ln rho)''

    The phase is reconstructed as the antiderivative of its stated gradient
    from the left boundary, so its additive time gauge is lost; the residual
    is therefore reported with its spatial mean removed (sup norm over the
    above-floor region).
    """
    if variant not in _HJ_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if len(traj) < 2:
        raise ValueError("need at least two field slices")
    k = len(traj) // 2 if len(traj) >= 3 else 0
    mid = traj[k]
    dx = mid.dx
    gradient = (lambda f: f.b) if variant == "modified_40" else (lambda f: f.v)
    if len(traj) >= 3:
        span = traj[k + 1].t - traj[k - 1].t
        if span <= 0:
            raise ValueError("field slices must carry increasing times")
        s_dot = (cumint(gradient(traj[k + 1]), dx) - cumint(gradient(traj[k - 1]), dx)) / span
    else:
        span = traj[1].t - traj[0].t
        if span <= 0:
            raise ValueError("field slices must carry increasing times")
        s_dot = (cumint(gradient(traj[1]), dx) - cumint(gradient(traj[0]), dx)) / span

    V = np.asarray(V, dtype=float)
    log_rho = np.log(mid.rho)
    if variant == "modified_40":
        res = s_dot + 0.5 * mid.b ** 2 + mid.nu * grad(mid.b, dx) + V
    else:
        quad = 0.5 * mid.nu ** 2 * grad(log_rho, dx) ** 2 + mid.nu ** 2 * lap(log_rho, dx)
        sign = -1.0 if variant == "schrodinger_30" else 1.0
        res = s_dot + 0.5 * mid.v ** 2 + V + sign * quad
    mask = eroded_mask(mid.above_floor)
    demeaned = res - res[mask].mean()
    return {
        "residual_field": res,
        "demeaned_sup_norm": float(np.abs(demeaned[mask]).max()),
        "mask": mask,
    }


def continuity_residual(traj):
    """Sup norm of d(rho)/dt + (v rho)' at the middle slice, interior points."""
    if len(traj) < 2:
        raise ValueError("need at least two field slices")
    k = len(traj) // 2 if len(traj) >= 3 else 0
    mid = traj[k]
    if len(traj) >= 3:
        span = traj[k + 1].t - traj[k - 1].t
        rho_dot = (traj[k + 1].rho - traj[k - 1].rho) / span
    else:
        span = traj[1].t - traj[0].t
        rho_dot = (traj[1].rho - traj[0].rho) / span
    res = rho_dot + grad(mid.v * mid.rho, mid.dx)
    mask = eroded_mask(mid.above_floor)
    mask[0] = mask[-1] = False
    return {"residual_field": res, "sup_norm": float(np.abs(res[mask]).max()),
            "mask": mask}


def scaled_equation_residual(traj, V, z, max_floor_fraction=0.01):
    """Residual of the rescaled wave equation for chi = exp(R + i S / z).

    For general complex z the printed form is
      [-(z hbar)^2/2 Lap + (V + (hbar^2/2)(z^2 - 1) Lap(sqrt rho)/sqrt rho)] chi
        = i z hbar d(chi)/dt.
    For purely imaginary z the equivalent real pair in exp(R +- S) is
    evaluated instead:
      [|z|^2 hbar^2/2 Lap + (V - (hbar^2/2)(|z|^2+1) Lap(sqrt rho)/sqrt rho)] e^{R+-S}
        = -+ |z| hbar d/dt e^{R+-S}.
    The trajectory must hold at least three states; time derivatives are
    central at the middle slice.  States whose density sits below floor on
    more than ``max_floor_fraction`` of the grid are rejected.
    """
    if z == 0:
        raise ValueError("z must be nonzero")
    if len(traj) < 3:
        raise ValueError("need at least three states for the time derivative")
    k = len(traj) // 2
    w = traj[k]
    dx, hbar = w.dx, w.hbar

    def log_fields(state):
        rho = np.abs(state.psi) ** 2
        floor = FLOOR_FRACTION * rho.max()
        below = np.count_nonzero(rho < floor)
        if below > max_floor_fraction * rho.size:
            raise NumericalError(
                f"density below floor on {below / rho.size:.1%} of the grid; "
                "shrink the domain to where the state lives")
        rho = np.maximum(rho, floor)
        rho /= trapz(rho, dx)
        phase = np.angle(state.psi)
        jumps = np.diff(phase)
        wrapped = (jumps + np.pi) % (2.0 * np.pi) - np.pi
        s = np.empty_like(phase)
        s[0] = phase[0]
        np.cumsum(wrapped, out=s[1:])
        s[1:] += phase[0]
        return 0.5 * np.log(rho), s, rho

    r_m, s_m, rho_m = log_fields(traj[k - 1])
    r_0, s_0, rho_0 = log_fields(w)
    r_p, s_p, rho_p = log_fields(traj[k + 1])
    anchor = int(np.argmax(rho_0))
    # keep the temporal phase continuous at the density peak
    for s_other in (s_m, s_p):
        s_other += 2.0 * np.pi * np.round((s_0[anchor] - s_other[anchor]) / (2.0 * np.pi))
    span = traj[k + 1].t - traj[k - 1].t

    V = np.asarray(V, dtype=float)
    qfac = lap(np.sqrt(rho_0), dx) / np.sqrt(rho_0)
    mask = np.ones_like(rho_0, dtype=bool)

    if np.isrealobj(np.asarray(z)) or abs(np.real(z)) > 1e-14 * abs(z):
        zc = complex(z)
        chi_m = np.exp(r_m + 1j * s_m / zc)
        chi_0 = np.exp(r_0 + 1j * s_0 / zc)
        chi_p = np.exp(r_p + 1j * s_p / zc)
        chi_dot = (chi_p - chi_m) / span
        lhs = (-(zc * hbar) ** 2 / 2.0) * _lap_c(chi_0, dx) \
            + (V + 0.5 * hbar ** 2 * (zc ** 2 - 1.0) * qfac) * chi_0
        res = lhs - 1j * zc * hbar * chi_dot
        sup = float(np.abs(res[mask]).max())
        return {"residual_field": res, "sup_norm": sup, "form": "complex"}

    zabs = abs(np.imag(complex(z)))
    sup = 0.0
    fields = {}
    for sign, label in ((+1.0, "plus"), (-1.0, "minus")):
        e_m = np.exp(r_m + sign * s_m)
        e_0 = np.exp(r_0 + sign * s_0)
        e_p = np.exp(r_p + sign * s_p)
        e_dot = (e_p - e_m) / span
        lhs = (zabs ** 2 * hbar ** 2 / 2.0) * lap(e_0, dx) \
            + (V - 0.5 * hbar ** 2 * (zabs ** 2 + 1.0) * qfac) * e_0
        res = lhs + sign * zabs * hbar * e_dot
        fields[label] = res
        sup = max(sup, float(np.abs(res[mask]).max()))
    return {"residual_fields": fields, "sup_norm": sup, "form": "real_pair"}


def _lap_c(f, dx):
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / dx ** 2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / dx ** 2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / dx ** 2
    return out


def export_fields(traj, path):
    """Write `t,x,rho,S,u,v,b,b_star` rows for a field trajectory."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "rho", "S", "u", "v", "b", "b_star"])
        for f in traj:
            for i, x in enumerate(f.x_grid):
                writer.writerow([f"{f.t:.15g}", f"{x:.15g}", f"{f.rho[i]:.15g}",
                                 f"{f.S_phase[i]:.15g}", f"{f.u[i]:.15g}",
                                 f"{f.v[i]:.15g}", f"{f.b[i]:.15g}",
                                 f"{f.b_star[i]:.15g}"])


def export_residual_summary(path, residuals):
    """Write residual norms keyed by equation tag to a JSON file."""
    with open(path, "w") as fh:
        json.dump(residuals, fh, indent=2, sort_keys=True)
        fh.write("\n")
