"""Exact dense master-equation integrator: the ground truth at small dims.

The right-hand side uses the effective-Hamiltonian form
``drho/dt = -i (H_eff rho - rho H_eff^dag) + sum_m c_m rho c_m^dag``
and is integrated with classical fixed-step RK4 on the dense matrix.
Multi-sector (loss) models are flattened to a direct-sum space first.
Hermiticity, unit trace and positivity are checked at report times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, OracleInvariantError, OracleSizeError
from .linalg import Operator
from .model import FlatModel, LindbladModel, flatten_sectors

ORACLE_MAX_DIM = 4096

TRACE_ATOL = 1e-10
HERM_ATOL = 1e-10
EIG_FLOOR = -1e-8


@dataclass(frozen=True)
class LindbladGenerator:
    """Prepared sparse pieces of the Liouvillian for one model."""

    h_eff: Operator
    jumps: tuple[Operator, ...]
    dim: int

    @staticmethod
    def on(model: LindbladModel | FlatModel) -> "LindbladGenerator":
        if isinstance(model, LindbladModel):
            flat = flatten_sectors(model) if model.multi_sector else None
            if flat is not None:
                model = flat
            else:
                return LindbladGenerator(
                    h_eff=model.h_eff,
                    jumps=tuple(ch.op for ch in model.jumps),
                    dim=model.dim,
                )
        return LindbladGenerator(h_eff=model.h_eff, jumps=tuple(op for _, op in model.jumps), dim=model.dim)

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """Master-equation right-hand side; works for non-Hermitian rho too."""
        he = self.h_eff.matrix
        out = -1j * (he @ rho)
        out += 1j * (he @ rho.conj().T).conj().T  # +i rho H_eff^dag
        for c in self.jumps:
            m = c.matrix
            crho = m @ rho
            out += (m @ crho.conj().T).conj().T  # (c rho) c^dag
        return out


def _as_generator(model) -> LindbladGenerator:
    gen = model if isinstance(model, LindbladGenerator) else LindbladGenerator.on(model)
    if gen.dim > ORACLE_MAX_DIM:
        raise OracleSizeError(f"oracle dim {gen.dim} exceeds bound {ORACLE_MAX_DIM}")
    return gen


def lindblad_rhs(model, rho: np.ndarray) -> np.ndarray:
    """Exact drho/dt for a density matrix (trace of the result is zero)."""
    gen = _as_generator(model)
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (gen.dim, gen.dim):
        raise DimensionMismatchError(f"rho shape {rho.shape}, expected {(gen.dim, gen.dim)}")
    return gen.rhs(rho)


def check_density_matrix(rho: np.ndarray, when: str = "") -> None:
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_ATOL:
        raise OracleInvariantError(f"trace drifted to {tr} {when}(dt too large?)")
    if np.abs(rho - rho.conj().T).max() > HERM_ATOL:
        raise OracleInvariantError(f"density matrix lost Hermiticity {when}")
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < EIG_FLOOR:
        raise OracleInvariantError(f"negative eigenvalue {evals.min():.3e} {when}")


def _rk4_advance(gen: LindbladGenerator, rho: np.ndarray, t0: float, t1: float, dt: float) -> np.ndarray:
    """Fixed-step RK4 from t0 to t1 (generator is time-independent)."""
    span = t1 - t0
    if span <= 0:
        return rho
    n_steps = max(1, int(np.ceil(span / dt - 1e-12)))
    h = span / n_steps
    for _ in range(n_steps):
        k1 = gen.rhs(rho)
        k2 = gen.rhs(rho + 0.5 * h * k1)
        k3 = gen.rhs(rho + 0.5 * h * k2)
        k4 = gen.rhs(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def integrate_master(model, rho0: np.ndarray, report_times, dt: float, check: bool = True) -> list[np.ndarray]:
    """Integrate the master equation, returning rho at each report time.

    ``dt`` is the RK4 step; choose it so that halving changes results by
    less than 1e-8 (the test suite enforces this for the catalog models).
    Density-matrix invariants are verified at report times unless ``check``
    is disabled (as when propagating the non-Hermitian argument of the
    regression theorem).
    """
    gen = _as_generator(model)
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = np.array(rho0, dtype=np.complex128, copy=True)
    if rho.shape != (gen.dim, gen.dim):
        raise DimensionMismatchError(f"rho0 shape {rho.shape}, expected {(gen.dim, gen.dim)}")
    out = []
    t = 0.0
    for t_next in report_times:
        if t_next < t - 1e-12:
            raise ValueError("report_times must be non-decreasing")
        rho = _rk4_advance(gen, rho, t, float(t_next), dt)
        t = float(t_next)
        if check:
            check_density_matrix(rho, when=f"at t={t:g} ")
        out.append(rho.copy())
    return out


def steady_state(model, rho0: np.ndarray, dt: float, block: float = 10.0, atol: float = 1e-12, max_time: float = 1e5):
    """Integrate until rho stops changing; returns (rho, time reached)."""
    gen = _as_generator(model)
    rho = np.array(rho0, dtype=np.complex128, copy=True)
    t = 0.0
    while t < max_time:
        nxt = _rk4_advance(gen, rho, t, t + block, dt)
        t += block
        if np.abs(nxt - rho).max() < atol:
            return nxt, t
        rho = nxt
    raise OracleInvariantError(f"no steady state within t={max_time:g}")


def two_time_oracle(model, rho0: np.ndarray, t: float, tau_grid, a_op: Operator, b_op: Operator, dt: float):
    """Correlations ``C(t, tau) = Tr[A  Lambda_tau(B rho(t))]``.

    The delay dependence follows from propagating the (generally
    non-Hermitian) matrix ``B rho(t)`` under the same master-equation
    generator, which is how the regression theorem acts operationally.
    """
    gen = _as_generator(model)
    (rho_t,) = integrate_master(gen, rho0, [t], dt)
    x = b_op.matrix @ rho_t
    a_dense = a_op.to_dense()
    out = []
    t_prev = 0.0
    for tau in tau_grid:
        x = _rk4_advance(gen, x, t_prev, float(tau), dt)
        t_prev = float(tau)
        out.append(complex(np.trace(a_dense @ x)))
    return out


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Half the sum of absolute eigenvalues of the (Hermitian) difference."""
    r1 = np.asarray(rho1)
    r2 = np.asarray(rho2)
    if r1.shape != r2.shape:
        raise DimensionMismatchError(f"shape mismatch {r1.shape} vs {r2.shape}")
    diff = r1 - r2
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())
