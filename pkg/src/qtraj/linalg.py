"""Complex vector/operator arithmetic and short-time propagators.

States are plain 1-D ``numpy`` arrays of ``complex128``; operators wrap a
sparse matrix together with a hermiticity hint.  The propagators cover both
Hermitian generators and the non-Hermitian generators ``-i H_eff`` that drive
no-jump evolution: :func:`expm_action` is an Arnoldi/Krylov method with
adaptive substepping and an a-posteriori error estimate, and
:func:`dense_expm` is the dense oracle it is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionMismatchError, NormalizationError, OracleSizeError, PropagatorError

HERMITIAN_RTOL = 1e-12
DEFAULT_PROPAGATOR_TOL = 1e-9
DENSE_EXPM_MAX_DIM = 4096

_KRYLOV_MAX_BASIS = 64
_BREAKDOWN_TOL = 1e-13


def as_state(values) -> np.ndarray:
    """Coerce to a complex128 1-D array, validating finiteness."""
    v = np.ascontiguousarray(values, dtype=np.complex128)
    if v.ndim != 1:
        raise DimensionMismatchError(f"state must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v.view(np.float64))):
        raise ValueError("state contains non-finite entries")
    return v


@dataclass(frozen=True, eq=False)
class Operator:
    """Sparse complex linear map, optionally flagged Hermitian.

    ``matrix`` has shape ``(dim_out, dim_in)``; rectangular operators map
    between particle-number sectors.  When ``hermitian`` is set the matrix
    must be square and equal to its adjoint within ``HERMITIAN_RTOL``
    (relative to its largest entry).
    """

    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = self.matrix
        if not sp.issparse(m):
            m = sp.csr_matrix(np.asarray(m, dtype=np.complex128))
        elif m.format != "csr" or m.dtype != np.complex128:
            m = m.astype(np.complex128).tocsr()
        object.__setattr__(self, "matrix", m)
        if m.nnz and not np.all(np.isfinite(m.data.view(np.float64))):
            raise ValueError("operator contains non-finite entries")
        if self.hermitian:
            if m.shape[0] != m.shape[1]:
                raise DimensionMismatchError("hermitian operator must be square")
            diff = abs(m - m.conj().T)
            scale = max(abs(m).max() if m.nnz else 0.0, 1e-300)
            if diff.nnz and diff.max() > HERMITIAN_RTOL * scale:
                raise ValueError(
                    f"hermitian_hint set but max |A - A^dag| = {diff.max():.3e} "
                    f"exceeds {HERMITIAN_RTOL:.0e} relative"
                )

    @property
    def dim_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def dim_out(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T.tocsr(), hermitian=self.hermitian)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return Operator(self.matrix @ other.matrix)
        return self.matrix @ np.asarray(other, dtype=np.complex128)

    def __add__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix - other.matrix)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.matrix * scalar)

    __rmul__ = __mul__

    @staticmethod
    def identity(dim: int, hermitian: bool = True) -> "Operator":
        return Operator(sp.identity(dim, dtype=np.complex128, format="csr"), hermitian=hermitian)

    @staticmethod
    def from_dense(array, hermitian: bool = False) -> "Operator":
        return Operator(sp.csr_matrix(np.asarray(array, dtype=np.complex128)), hermitian=hermitian)


def apply(op: Operator, v: np.ndarray) -> np.ndarray:
    """Return ``op @ v`` without touching the input."""
    v = np.asarray(v)
    if op.dim_in != v.shape[0]:
        raise DimensionMismatchError(f"operator expects dim {op.dim_in}, state has dim {v.shape[0]}")
    return op.matrix @ v.astype(np.complex128, copy=False)


def inner(u: np.ndarray, v: np.ndarray) -> complex:
    """Inner product ``<u|v>`` with conjugation on the first argument."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return complex(np.vdot(u, v))


def norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def expectation(op: Operator, v: np.ndarray, atol_norm: float = 1e-10) -> complex:
    """``<v|op|v>`` for a normalized ``v``.

    Raises if ``v`` is not normalized within ``atol_norm``.  For operators
    flagged Hermitian, a residual imaginary part above 1e-10 (relative)
    raises rather than silently returning a complex value.
    """
    nv = norm(v)
    if abs(nv - 1.0) > atol_norm:
        raise NormalizationError(f"expectation requires a normalized state, |norm - 1| = {abs(nv-1.0):.3e}")
    val = inner(v, apply(op, v))
    if op.hermitian:
        scale = max(abs(val), 1.0)
        if abs(val.imag) > 1e-10 * scale:
            raise ValueError(f"hermitian expectation has imaginary part {val.imag:.3e}")
    return val


def dense_expm(m, t: float = 1.0) -> np.ndarray:
    """Dense matrix exponential ``exp(m*t)`` at oracle scale (dim <= 4096)."""
    a = m.to_dense() if isinstance(m, Operator) else np.asarray(m, dtype=np.complex128)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatchError("dense_expm requires a square matrix")
    if a.shape[0] > DENSE_EXPM_MAX_DIM:
        raise OracleSizeError(f"dim {a.shape[0]} exceeds dense oracle bound {DENSE_EXPM_MAX_DIM}")
    return scipy.linalg.expm(a * t)


def _arnoldi(matvec, v0: np.ndarray, beta: float, m_max: int):
    """Arnoldi factorization A V_m = V_{m+1} H_m starting from v0/beta.

    Returns (V, H, m, breakdown) with V of shape (dim, m+1) and H of shape
    (m+1, m); ``breakdown`` signals an invariant subspace (happy breakdown),
    in which case the Krylov result is exact.
    """
    dim = v0.shape[0]
    m_max = min(m_max, dim)
    V = np.empty((dim, m_max + 1), dtype=np.complex128)
    H = np.zeros((m_max + 1, m_max), dtype=np.complex128)
    V[:, 0] = v0 / beta
    for j in range(m_max):
        w = matvec(V[:, j])
        # modified Gram-Schmidt with one reorthogonalization pass
        for i in range(j + 1):
            h = np.vdot(V[:, i], w)
            H[i, j] += h
            w -= h * V[:, i]
        for i in range(j + 1):
            h = np.vdot(V[:, i], w)
            H[i, j] += h
            w -= h * V[:, i]
        hnorm = np.linalg.norm(w)
        H[j + 1, j] = hnorm
        if hnorm < _BREAKDOWN_TOL * max(1.0, abs(H[: j + 1, : j + 1]).max()):
            return V[:, : j + 1], H[: j + 2, : j + 1], j + 1, True
        V[:, j + 1] = w / hnorm
    return V[:, : m_max + 1], H, m_max, False


def _krylov_step(V, H, m, breakdown, beta, dt):
    """Evaluate the Krylov approximation of exp(A dt) v and its error estimate."""
    Hm = H[:m, :m]
    eHm = scipy.linalg.expm(Hm * dt)
    y = beta * eHm[:, 0]
    result = V[:, :m] @ y
    if breakdown:
        return result, 0.0
    # generalized-residual estimate: |h_{m+1,m}| * |e_m^T exp(dt Hm) e_1| * beta
    err = abs(H[m, m - 1]) * abs(dt) * abs(y[m - 1])
    return result, float(err)


def expm_action(gen: Operator, v: np.ndarray, dt: float, tol: float = DEFAULT_PROPAGATOR_TOL) -> np.ndarray:
    """Compute ``exp(gen * dt) @ v`` for a (possibly non-Hermitian) generator.

    Arnoldi projection with adaptive substepping: the step is halved until
    the per-substep residual estimate falls below the requested relative
    tolerance.  The result is *not* renormalized; for ``gen = -i H_eff``
    the norm loss encodes the no-jump survival probability.

    Raises :class:`PropagatorError` (with the achieved error) if the
    tolerance cannot be met.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    v = as_state(v)
    if gen.dim_in != gen.dim_out:
        raise DimensionMismatchError("generator must be square")
    if gen.dim_in != v.shape[0]:
        raise DimensionMismatchError(f"generator dim {gen.dim_in} vs state dim {v.shape[0]}")
    if dt == 0.0:
        return v.copy()
    beta = np.linalg.norm(v)
    if beta == 0.0:
        return v.copy()

    matvec = lambda x: gen.matrix @ x
    t_done = 0.0
    h = dt
    cur = v
    min_h = dt * 1e-12
    while t_done < dt * (1 - 1e-15):
        h = min(h, dt - t_done)
        b = np.linalg.norm(cur)
        if b == 0.0:
            return cur
        V, H, m, breakdown = _arnoldi(matvec, cur, b, _KRYLOV_MAX_BASIS)
        budget = tol * (h / dt)
        while True:
            result, err = _krylov_step(V, H, m, breakdown, b, h)
            rnorm = np.linalg.norm(result)
            if breakdown or err <= budget * max(rnorm, b * 1e-30):
                break
            if h <= min_h:
                raise PropagatorError(
                    f"expm_action failed to reach tol={tol:.1e} (achieved estimate {err:.3e})",
                    achieved=err / max(rnorm, 1e-300),
                )
            h *= 0.5
            budget = tol * (h / dt)
        cur = result
        t_done += h
        if err < 0.1 * budget * max(np.linalg.norm(cur), 1e-300):
            h *= 2.0
    return cur


@dataclass
class FixedGeneratorPropagator:
    """Repeated application of ``exp(gen * t)`` for one fixed generator.

    For small dims an eigendecomposition of the generator is cached, making
    each application O(dim^2) for arbitrary ``t``; the cache is validated
    against :func:`expm_action` at construction and discarded if the
    generator is too ill-conditioned (falling back to Krylov per call).
    Either path satisfies the expm_action error contract at ``tol``.
    """

    gen: Operator
    tol: float = DEFAULT_PROPAGATOR_TOL
    eig_max_dim: int = 512
    _eig: tuple | None = field(default=None, init=False, repr=False)
    _checked: bool = field(default=False, init=False, repr=False)

    def _try_eig(self):
        self._checked = True
        dim = self.gen.dim_in
        if dim > self.eig_max_dim:
            return
        a = self.gen.to_dense()
        try:
            w, P = np.linalg.eig(a)
            Pinv = np.linalg.inv(P)
        except np.linalg.LinAlgError:
            return
        if np.linalg.cond(P) > 1e8:
            return
        # validate against the Krylov route on a deterministic probe vector
        probe = np.cos(np.arange(dim) + 0.25) + 1j * np.sin(0.5 * np.arange(dim) + 0.5)
        probe /= np.linalg.norm(probe)
        scale = sp.linalg.norm(self.gen.matrix) if self.gen.nnz else 0.0
        t_probe = 1.0 / max(scale, 1e-30)
        ref = expm_action(self.gen, probe, t_probe, self.tol)
        test = P @ (np.exp(w * t_probe) * (Pinv @ probe))
        if np.linalg.norm(ref - test) <= 10 * self.tol * max(np.linalg.norm(ref), 1e-30):
            self._eig = (w, P, Pinv)

    def apply(self, v: np.ndarray, t: float) -> np.ndarray:
        if t == 0.0:
            return np.array(v, dtype=np.complex128, copy=True)
        if not self._checked:
            self._try_eig()
        if self._eig is not None:
            w, P, Pinv = self._eig
            return P @ (np.exp(w * t) * (Pinv @ v))
        return expm_action(self.gen, v, t, self.tol)
