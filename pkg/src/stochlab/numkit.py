"""Self-contained numerical kernel.

Provides the four primitives everything else builds on: reproducible
counter-based random streams, a cyclic Jacobi eigensolver for Hermitian
matrices, two samplers for Haar-distributed unitary matrices, and a
fixed-step classical RK4 integrator for matrix-valued ODEs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-12
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class NumericalError(RuntimeError):
    """Base class for runtime numerical failures (maps to CLI exit code 3)."""


class NonHermitianError(NumericalError):
    def __init__(self, asymmetry):
        self.asymmetry = asymmetry
        super().__init__(f"matrix is not Hermitian: max |M - M^H| = {asymmetry:.3e}")


class ConvergenceError(NumericalError):
    def __init__(self, off_norm, sweeps):
        self.off_norm = off_norm
        super().__init__(
            f"Jacobi sweeps did not converge after {sweeps} sweeps; "
            f"off-diagonal norm = {off_norm:.3e}"
        )


class FlowDivergenceError(NumericalError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state encountered at integration step {step}")


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    Streams are splittable: ``child(k)`` derives an independent stream in a
    way that depends only on the key material, never on draw order or any
    parallel schedule.  The same key always reproduces the same samples.
    """

    master_seed: int
    stream_id: int = 0
    lineage: tuple = ()

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.lineage + (int(index),))

    def partial_hash(self) -> int:
        h = _splitmix64(self.master_seed & _MASK64)
        for word in (self.stream_id,) + self.lineage:
            h = _splitmix64(h ^ _splitmix64(word & _MASK64))
        return h

    def _key(self):
        return key_from_hash(self.partial_hash())

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key()))


def key_from_hash(h: int):
    return np.array([h, _splitmix64(h ^ _GOLDEN)], dtype=np.uint64)


def child_hash(parent_hash: int, index: int) -> int:
    """Hash of parent.child(index); lets hot loops skip object construction."""
    return _splitmix64(parent_hash ^ _splitmix64(index & _MASK64))


def generator_from_hash(h: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key_from_hash(h)))


def frobenius(m) -> float:
    return float(np.linalg.norm(np.asarray(m).ravel()))


def max_abs(m) -> float:
    m = np.asarray(m)
    return float(np.abs(m).max()) if m.size else 0.0


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    return max_abs(m - m.conj().T) <= tol


def hermitian_eigh(m, sweep_cap: int = 100):
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvector columns).  Accuracy targets:
    reconstruction residual <= 1e-10 * ||M||_F and orthonormal columns to
    1e-12, which cyclic Jacobi delivers comfortably at the dimensions (< 64)
    used here.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    asym = max_abs(m - m.conj().T)
    if asym > HERMITIAN_TOL:
        raise NonHermitianError(asym)
    n = m.shape[0]
    a = m.copy()
    v = np.eye(n, dtype=np.complex128)
    if n == 1:
        return np.array([a[0, 0].real]), v

    def off_norm(mat):
        # sum only off-diagonal entries; any ||A||^2 - ||diag||^2 shortcut
        # cancels catastrophically once nearly converged
        sq = np.abs(mat) ** 2
        np.fill_diagonal(sq, 0.0)
        return float(np.sqrt(sq.sum()))

    scale = max(frobenius(a), 1.0)
    off_tol = 1e-14 * scale
    for sweep in range(sweep_cap):
        off = off_norm(a)
        if off <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r <= 1e-18 * scale:
                    continue
                phase = apq / r
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * r)
                t = (1.0 if tau >= 0.0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                gp = s * phase           # G[p,q]
                gq = -s * np.conj(phase)  # G[q,p]
                # A <- G^H A G, acting only on rows/columns p and q
                col_p = c * a[:, p] + gq * a[:, q]
                col_q = gp * a[:, p] + c * a[:, q]
                a[:, p] = col_p
                a[:, q] = col_q
                row_p = c * a[p, :] + np.conj(gq) * a[q, :]
                row_q = np.conj(gp) * a[p, :] + c * a[q, :]
                a[p, :] = row_p
                a[q, :] = row_q
                a[p, p] = app - t * r
                a[q, q] = aqq + t * r
                a[p, q] = 0.0
                a[q, p] = 0.0
                col_p = c * v[:, p] + gq * v[:, q]
                col_q = gp * v[:, p] + c * v[:, q]
                v[:, p] = col_p
                v[:, q] = col_q
    else:
        raise ConvergenceError(off_norm(a), sweep_cap)

    eigvals = np.diagonal(a).real.copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], v[:, order]


def _ginibre(n: int, gen: np.random.Generator):
    return (gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))) / np.sqrt(2.0)


def haar_unitary(n: int, rng: RngStream, method: str = "gram_schmidt"):
    """Sample an n x n unitary from the Haar measure.

    ``gram_schmidt``: QR of a complex Ginibre matrix, with column k multiplied
    by conj(R_kk)/|R_kk| (the phase correction is mandatory; the raw QR factor
    is not Haar, its column phases are biased by the factorization).

    ``column_wise``: first column uniform on the unit sphere, every following
    column drawn Gaussian in the orthogonal complement of the previous ones
    and normalized.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    gen = rng.generator()
    if method == "gram_schmidt":
        q, r = np.linalg.qr(_ginibre(n, gen))
        d = np.diagonal(r)
        return q * (np.conj(d) / np.abs(d))
    if method == "column_wise":
        cols = np.empty((n, n), dtype=np.complex128)
        for k in range(n):
            while True:
                vec = (gen.standard_normal(n) + 1j * gen.standard_normal(n)) / np.sqrt(2.0)
                for _ in range(2):  # second pass keeps the complement clean
                    for j in range(k):
                        vec -= cols[:, j] * np.vdot(cols[:, j], vec)
                nrm = np.linalg.norm(vec)
                if nrm > 1e-12:
                    cols[:, k] = vec / nrm
                    break
        return cols
    raise ValueError(f"unknown Haar sampling method {method!r}")


def rk4_matrix_flow(rhs, state0, dt: float, steps: int, t0: float = 0.0):
    """Integrate d(state)/dt = rhs(t, state) with classical RK4.

    ``state`` is a list of complex or real matrices; the trajectory returned
    contains steps+1 entries including the initial state.  A NaN or Inf in
    any state component aborts with the offending step index.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = [np.array(m) for m in state0]
    traj = [tuple(m.copy() for m in state)]
    t = t0
    for step in range(steps):
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * dt, [m + 0.5 * dt * d for m, d in zip(state, k1)])
        k3 = rhs(t + 0.5 * dt, [m + 0.5 * dt * d for m, d in zip(state, k2)])
        k4 = rhs(t + dt, [m + dt * d for m, d in zip(state, k3)])
        state = [
            m + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for m, a, b, c, d in zip(state, k1, k2, k3, k4)
        ]
        if not all(np.all(np.isfinite(m)) for m in state):
            raise FlowDivergenceError(step)
        t = t0 + (step + 1) * dt
        traj.append(tuple(m.copy() for m in state))
    return traj
