"""Occupation-number bases for bosonic lattices and their site operators.

Bases enumerate tuples ``(n_1, ..., n_L)`` with ``0 <= n_l <= n_max``,
optionally restricted to a fixed total particle number.  Loss jumps map
between number sectors, so :func:`site_lowering` builds the rectangular
matrix of ``(a_l)^k`` from the sector with N particles into the sector with
N-k; every trajectory then lives in a single sector between jumps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, sqrt

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, SectorError
from .linalg import Operator


@dataclass(frozen=True)
class OccupationBasis:
    """Ordered occupation-number basis, lexicographic in the tuples."""

    sites: int
    n_max: int
    sector: int | None
    states: tuple[tuple[int, ...], ...]
    index: dict[tuple[int, ...], int] = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def occupations(self) -> np.ndarray:
        """(dim, sites) integer array of occupation numbers."""
        return np.array(self.states, dtype=np.int64).reshape(self.dim, self.sites)


def enumerate_basis(sites: int, n_max: int, total: int | None = None) -> OccupationBasis:
    """Enumerate the basis for ``sites`` sites with at most ``n_max`` bosons each.

    With ``total`` given, only states with that total particle number are
    kept.  Ordering is lexicographic in the occupation tuple, which fixes a
    deterministic state indexing across runs.
    """
    if sites < 1:
        raise ValueError("sites must be >= 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if total is not None:
        if total < 0 or total > sites * n_max:
            raise SectorError(f"sector N={total} infeasible for {sites} sites with n_max={n_max}")
        states = _fixed_number_states(sites, n_max, total)
    else:
        states = list(itertools.product(range(n_max + 1), repeat=sites))
    if not states:
        raise SectorError(f"empty sector: N={total}, sites={sites}, n_max={n_max}")
    states_t = tuple(states)
    return OccupationBasis(
        sites=sites,
        n_max=n_max,
        sector=total,
        states=states_t,
        index={s: i for i, s in enumerate(states_t)},
    )


def _fixed_number_states(sites: int, n_max: int, total: int) -> list[tuple[int, ...]]:
    # direct lexicographic generation: first site occupancy ascending, recurse
    out: list[tuple[int, ...]] = []

    def rec(prefix, remaining, sites_left):
        if sites_left == 0:
            if remaining == 0:
                out.append(tuple(prefix))
            return
        lo = max(0, remaining - n_max * (sites_left - 1))
        hi = min(n_max, remaining)
        for n in range(lo, hi + 1):
            rec(prefix + [n], remaining - n, sites_left - 1)

    rec([], total, sites)
    return out


def sector_dimension(sites: int, n_max: int, total: int) -> int:
    """Exact combinatorial count via inclusion-exclusion over n_max overflows."""
    dim = 0
    for j in range(sites + 1):
        rem = total - j * (n_max + 1)
        if rem < 0:
            break
        dim += (-1) ** j * comb(sites, j) * comb(rem + sites - 1, sites - 1)
    return dim


@dataclass(frozen=True)
class SectorFamily:
    """Bases for N, N-k, N-2k, ..., down to the last feasible sector."""

    arity: int
    bases: tuple[OccupationBasis, ...]

    def __post_init__(self):
        if not self.bases:
            raise SectorError("sector family must contain at least one basis")
        top = self.bases[0]
        for i, b in enumerate(self.bases):
            if b.sector is None:
                raise SectorError("sector family members must have fixed particle number")
            if b.sector != top.sector - i * self.arity:
                raise SectorError("sector family particle numbers must step by the loss arity")

    @property
    def totals(self) -> tuple[int, ...]:
        return tuple(b.sector for b in self.bases)


def sector_family(sites: int, n_max: int, total: int, arity: int) -> SectorFamily:
    """Build bases for total, total-arity, ... while sectors stay non-negative."""
    bases = []
    n = total
    while n >= 0:
        bases.append(enumerate_basis(sites, n_max, n))
        n -= arity
    return SectorFamily(arity=arity, bases=tuple(bases))


def _check_site(basis: OccupationBasis, l: int):
    if not 0 <= l < basis.sites:
        raise DimensionMismatchError(f"site index {l} out of range for {basis.sites} sites")


def site_lowering(basis_from: OccupationBasis, basis_to: OccupationBasis, l: int, k: int = 1) -> Operator:
    """Matrix of ``(a_l)^k`` mapping ``basis_from`` into ``basis_to``.

    Bosonic amplitudes ``sqrt(n (n-1) ... (n-k+1))``.  For fixed-number
    sectors the operator is rectangular and the sectors must differ by
    exactly ``k`` particles.
    """
    _check_site(basis_from, l)
    if k < 1:
        raise ValueError("lowering arity k must be >= 1")
    if basis_from.sites != basis_to.sites or basis_from.n_max != basis_to.n_max:
        raise SectorError("bases must share lattice geometry and n_max")
    if (basis_from.sector is None) != (basis_to.sector is None):
        raise SectorError("cannot mix fixed-number and unrestricted bases")
    if basis_from.sector is not None and basis_from.sector - k != basis_to.sector:
        raise SectorError(
            f"sector mismatch: lowering by {k} from N={basis_from.sector} "
            f"lands in N={basis_from.sector - k}, got N={basis_to.sector}"
        )
    rows, cols, vals = [], [], []
    for col, state in enumerate(basis_from.states):
        n = state[l]
        if n < k:
            continue
        amp = 1.0
        for j in range(k):
            amp *= n - j
        target = list(state)
        target[l] = n - k
        rows.append(basis_to.index[tuple(target)])
        cols.append(col)
        vals.append(sqrt(amp))
    m = sp.csr_matrix(
        (np.array(vals, dtype=np.complex128), (rows, cols)),
        shape=(basis_to.dim, basis_from.dim),
    )
    return Operator(m)


def site_number(basis: OccupationBasis, l: int) -> Operator:
    """Diagonal number operator ``n_l``."""
    _check_site(basis, l)
    diag = basis.occupations()[:, l].astype(np.complex128)
    return Operator(sp.diags(diag, format="csr"), hermitian=True)


def total_number(basis: OccupationBasis) -> Operator:
    diag = basis.occupations().sum(axis=1).astype(np.complex128)
    return Operator(sp.diags(diag, format="csr"), hermitian=True)


def hop(basis: OccupationBasis, l: int, j: int) -> Operator:
    """Number-conserving hop ``a_l^dag a_j`` with bosonic amplitudes.

    Moves to states with ``n_l + 1 > n_max`` are dropped, which implements
    the hard-core constraint for ``n_max = 1`` with no separate code path.
    """
    _check_site(basis, l)
    _check_site(basis, j)
    if l == j:
        raise ValueError("hop requires distinct sites; use site_number for the diagonal")
    rows, cols, vals = [], [], []
    n_max = basis.n_max
    for col, state in enumerate(basis.states):
        if state[j] < 1 or state[l] + 1 > n_max:
            continue
        target = list(state)
        target[j] -= 1
        target[l] += 1
        rows.append(basis.index[tuple(target)])
        cols.append(col)
        vals.append(sqrt((state[l] + 1) * state[j]))
    m = sp.csr_matrix(
        (np.array(vals, dtype=np.complex128), (rows, cols)),
        shape=(basis.dim, basis.dim),
    )
    return Operator(m)


def fock_state(basis: OccupationBasis, occupations) -> np.ndarray:
    """Unit vector for a given occupation tuple."""
    key = tuple(int(n) for n in occupations)
    if key not in basis.index:
        raise SectorError(f"occupation {key} not in basis (sector N={basis.sector})")
    v = np.zeros(basis.dim, dtype=np.complex128)
    v[basis.index[key]] = 1.0
    return v
