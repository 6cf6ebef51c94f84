"""Constructors for the worked physical models and their reference formulas.

Covers the driven two-level atom with spontaneous decay, dephasing of
hard-core lattice bosons, Bose-Hubbard chains with dephasing or one-, two-
and three-body losses (loss models carry per-number-sector structure), the
continuous-Zeno rate formulas, and the dipole radiation kernels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg

from .basis import OccupationBasis, enumerate_basis, fock_state, hop, site_lowering, site_number, total_number
from .errors import SectorError, ZenoRegimeWarning
from .linalg import Operator
from .model import JumpChannel, LindbladModel, Sector, single_sector_model
from .trajectory import Observable

# ---------------------------------------------------------------------------
# driven two-level atom


@dataclass(frozen=True)
class TwoLevelParams:
    """Rabi frequency, detuning and decay rate, in common frequency units."""

    omega: float
    delta: float
    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("decay rate must be >= 0")


SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
SIGMA_PLUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)
SIGMA_MINUS = SIGMA_PLUS.conj().T


def two_level(p: TwoLevelParams) -> LindbladModel:
    """Driven two-level atom in the basis order {e, g}.

    ``H = -(omega/2) sigma_x - delta sigma_+ sigma_-`` with the decay
    channel ``sqrt(gamma) sigma_-``.
    """
    h = -(p.omega / 2.0) * SIGMA_X - p.delta * (SIGMA_PLUS @ SIGMA_MINUS)
    jumps = []
    if p.gamma > 0:
        jumps.append(("decay", Operator.from_dense(np.sqrt(p.gamma) * SIGMA_MINUS)))
    model = single_sector_model(Operator.from_dense(h, hermitian=True), jumps, label="two_level")
    return model


def two_level_state(which: str) -> np.ndarray:
    if which == "e":
        return np.array([1.0, 0.0], dtype=np.complex128)
    if which == "g":
        return np.array([0.0, 1.0], dtype=np.complex128)
    raise ValueError("two-level state must be 'e' or 'g'")


def steady_excited_population(p: TwoLevelParams) -> float:
    """Stationary excited-state population of the optical Bloch equations."""
    return (abs(p.omega) ** 2 / 4.0) / (p.delta**2 + p.gamma**2 / 4.0 + abs(p.omega) ** 2 / 2.0)


def optical_bloch_generator(p: TwoLevelParams) -> np.ndarray:
    """The 4x4 linear generator on (rho_eg, rho_ge, rho_ee, rho_gg).

    Component order follows the reference matrix layout; ``rho_eg`` is the
    matrix element ``rho[0, 1]`` in the {e, g} basis.  Cross-checked
    element-wise against the dense master-equation right-hand side.
    """
    om, de, ga = p.omega, p.delta, p.gamma
    return np.array(
        [
            [1j * de - ga / 2, 0.0, -1j * om / 2, 1j * om / 2],
            [0.0, -1j * de - ga / 2, 1j * om / 2, -1j * om / 2],
            [-1j * om / 2, 1j * om / 2, -ga, 0.0],
            [1j * om / 2, -1j * om / 2, ga, 0.0],
        ],
        dtype=np.complex128,
    )


def bloch_vectorize(rho: np.ndarray) -> np.ndarray:
    """Pack a 2x2 density matrix into the generator's component order."""
    return np.array([rho[0, 1], rho[1, 0], rho[0, 0], rho[1, 1]], dtype=np.complex128)


# ---------------------------------------------------------------------------
# lattice models


@dataclass(frozen=True)
class Dissipator:
    """On-site dissipation channel family; ``rate`` may be per-site for one_body."""

    kind: str  # dephasing | one_body | two_body | three_body
    rate: float | tuple

    KINDS = ("dephasing", "one_body", "two_body", "three_body")
    ARITY = {"dephasing": 0, "one_body": 1, "two_body": 2, "three_body": 3}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown dissipator kind {self.kind!r}")
        rates = np.atleast_1d(np.asarray(self.rate, dtype=float))
        if np.any(rates < 0):
            raise ValueError("dissipation rates must be >= 0")

    def site_rate(self, l: int) -> float:
        rates = np.atleast_1d(np.asarray(self.rate, dtype=float))
        return float(rates[l % len(rates)]) if rates.size > 1 else float(rates[0])


@dataclass(frozen=True)
class LatticeParams:
    """Bose-Hubbard chain parameters with a chosen dissipator.

    ``eps`` holds per-site energy offsets (length ``sites``).  Note: single
    sites are admitted so the on-site loss formulas can be exercised in
    isolation (with no bonds, ``J`` is inert).
    """

    sites: int
    particles: int
    n_max: int
    J: float
    U: float = 0.0
    eps: tuple | None = None
    boundary: str = "open"
    dissipator: Dissipator | None = None

    def __post_init__(self):
        if self.sites < 1:
            raise ValueError("need at least one site")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0 <= self.particles <= self.sites * self.n_max:
            raise SectorError("particle number infeasible for the lattice")
        if self.boundary not in ("open", "periodic"):
            raise ValueError("boundary must be 'open' or 'periodic'")
        if self.eps is not None and len(self.eps) != self.sites:
            raise ValueError("eps must have one offset per site")


def bonds(sites: int, boundary: str) -> list[tuple[int, int]]:
    """Nearest-neighbour bonds of a chain; the ring closure is skipped for
    two sites (it would double the single physical bond)."""
    out = [(l, l + 1) for l in range(sites - 1)]
    if boundary == "periodic" and sites > 2:
        out.append((sites - 1, 0))
    return out


def lattice_hamiltonian(basis: OccupationBasis, p: LatticeParams) -> Operator:
    """``-J sum_<l,j> (a_l^dag a_j + h.c.) + (U/2) sum n(n-1) + sum eps_l n_l``."""
    dim = basis.dim
    h = sp.csr_matrix((dim, dim), dtype=np.complex128)
    for l, j in bonds(p.sites, p.boundary):
        hop_lj = hop(basis, l, j).matrix
        h = h - p.J * (hop_lj + hop_lj.conj().T)
    occ = basis.occupations()
    diag = 0.5 * p.U * (occ * (occ - 1)).sum(axis=1).astype(np.float64)
    if p.eps is not None:
        diag = diag + occ @ np.asarray(p.eps, dtype=float)
    if np.any(diag):
        h = h + sp.diags(diag.astype(np.complex128), format="csr")
    return Operator(h.tocsr(), hermitian=True)


def _dephasing_channels(basis: OccupationBasis, diss: Dissipator) -> list[JumpChannel]:
    out = []
    for l in range(basis.sites):
        rate = diss.site_rate(l)
        if rate == 0:
            continue
        op = Operator(np.sqrt(rate) * site_number(basis, l).matrix)
        out.append(JumpChannel(f"deph_{l + 1}", op, target=0))
    return out


def bose_hubbard(p: LatticeParams) -> LindbladModel:
    """Bose-Hubbard chain with the configured on-site dissipator.

    Dephasing jumps are ``sqrt(gamma) n_l`` and conserve particle number;
    loss jumps ``sqrt(rate) a_l^k`` (k = 1, 2, 3 with the rate conventions
    ``Gamma_l``, ``Gamma_0``, ``gamma_3/6``) connect the fixed-number
    sector to the one with k fewer particles, so the model carries one
    sector per reachable particle number.
    """
    diss = p.dissipator
    if diss is None or diss.kind == "dephasing":
        basis = enumerate_basis(p.sites, p.n_max, p.particles)
        h = lattice_hamiltonian(basis, p)
        channels = _dephasing_channels(basis, diss) if diss is not None else []
        return LindbladModel(
            sectors=[Sector(h=h, channels=channels, basis=basis, label=f"N={p.particles}")],
            label="bose_hubbard",
        )

    arity = Dissipator.ARITY[diss.kind]
    totals = list(range(p.particles, -1, -arity))
    bases = [enumerate_basis(p.sites, p.n_max, n) for n in totals]
    sectors = []
    for s, basis in enumerate(bases):
        h = lattice_hamiltonian(basis, p)
        channels = []
        if s + 1 < len(bases):
            for l in range(p.sites):
                rate = diss.site_rate(l)
                if diss.kind == "three_body":
                    rate = rate / 6.0
                if rate == 0:
                    continue
                lower = site_lowering(basis, bases[s + 1], l, arity)
                channels.append(
                    JumpChannel(f"loss{arity}_{l + 1}", Operator(np.sqrt(rate) * lower.matrix), target=s + 1)
                )
        sectors.append(Sector(h=h, channels=channels, basis=basis, label=f"N={totals[s]}"))
    return LindbladModel(sectors=sectors, label="bose_hubbard")


def hardcore_chain(p: LatticeParams):
    """Hard-core chain with on-site dephasing; returns (model, energy observable).

    The kinetic Hamiltonian is its own reference observable: the exact
    ensemble satisfies ``<H>(t) = <H>(0) exp(-Gamma t)``.
    """
    if p.n_max != 1:
        raise ValueError("hardcore_chain requires n_max = 1")
    if p.U != 0:
        raise ValueError("hard-core chain has no on-site interaction term")
    if p.dissipator is not None and p.dissipator.kind != "dephasing":
        raise ValueError("hardcore_chain supports the dephasing dissipator")
    model = bose_hubbard(p)
    return model, Observable.single("energy", model.h)


def ground_state(model: LindbladModel, sector: int | None = None) -> np.ndarray:
    """Lowest eigenvector of the sector Hamiltonian (dense for small dims)."""
    h = model.sectors[model.start if sector is None else sector].h.matrix
    if h.shape[0] <= 64:
        w, v = np.linalg.eigh(h.toarray())
        psi = v[:, 0]
    else:
        w, v = sp.linalg.eigsh(h, k=1, which="SA")
        psi = v[:, 0]
    psi = psi.astype(np.complex128)
    return psi / np.linalg.norm(psi)


# ---------------------------------------------------------------------------
# named observables


def observables_for(model: LindbladModel, names) -> list[Observable]:
    return [resolve_observable(model, name) for name in names]


def resolve_observable(model: LindbladModel, name: str) -> Observable:
    """Build a named observable valid in every sector of the model.

    Two-level names: ``Pe``, ``Pg``.  Lattice names (sites 1-based):
    ``energy``, ``total_n``, ``n_<l>``, ``hop_<l>_<j>`` (the Hermitian
    combination a_l^dag a_j + a_j^dag a_l) and ``nn_<l>_<j>``.
    """
    if model.label == "two_level":
        if name == "Pe":
            return Observable.single("Pe", Operator.from_dense(np.diag([1.0, 0.0]), hermitian=True))
        if name == "Pg":
            return Observable.single("Pg", Operator.from_dense(np.diag([0.0, 1.0]), hermitian=True))
        raise KeyError(f"unknown two-level observable {name!r}")

    ops: dict[int, Operator] = {}
    for s, sector in enumerate(model.sectors):
        basis = sector.basis
        if basis is None:
            raise KeyError(f"model sector {s} has no basis; cannot resolve {name!r}")
        ops[s] = _lattice_operator(basis, sector, name)
    return Observable(name, ops)


def _lattice_operator(basis: OccupationBasis, sector: Sector, name: str) -> Operator:
    if name == "energy":
        return sector.h
    if name == "total_n":
        return total_number(basis)
    parts = name.split("_")
    if parts[0] == "n" and len(parts) == 2:
        return site_number(basis, int(parts[1]) - 1)
    if parts[0] == "hop" and len(parts) == 3:
        m = hop(basis, int(parts[1]) - 1, int(parts[2]) - 1).matrix
        return Operator(m + m.conj().T, hermitian=True)
    if parts[0] == "nn" and len(parts) == 3:
        a = site_number(basis, int(parts[1]) - 1).matrix
        b = site_number(basis, int(parts[2]) - 1).matrix
        return Operator(a @ b, hermitian=True)
    raise KeyError(f"unknown lattice observable {name!r}")


# ---------------------------------------------------------------------------
# continuous-Zeno reference formulas


def zeno_rate(omega: float, delta: float, gamma: float) -> float:
    """Effective scattering rate ``omega^2 gamma / (4 delta^2 + gamma^2)``.

    This is the decay rate of the no-jump survival probability of the
    ground state in the overdamped regime; it *decreases* with gamma once
    gamma > 2 delta, which is the continuous Zeno suppression.
    """
    if gamma <= 0:
        raise ValueError("zeno_rate requires gamma > 0")
    return omega**2 * gamma / (4.0 * delta**2 + gamma**2)


def zeno_effective_loss_check(J: float, gamma3: float, ratio_floor: float = 50.0) -> float:
    """Predicted three-body effective loss scale ``6 J^2 / gamma_3``.

    Valid deep in the Zeno regime; warns when ``gamma_3 / J`` is below
    ``ratio_floor``.
    """
    if gamma3 <= 0:
        raise ValueError("gamma3 must be > 0")
    if J != 0 and gamma3 / abs(J) < ratio_floor:
        warnings.warn(
            f"gamma3/J = {gamma3 / abs(J):.3g} < {ratio_floor:g}; "
            "perturbative loss-rate formula is unreliable",
            ZenoRegimeWarning,
            stacklevel=2,
        )
    return 6.0 * J**2 / gamma3


# ---------------------------------------------------------------------------
# dipole radiation kernels

_F_SERIES_CUTOFF = 0.1


def radiation_kernel_F(z: float, c: float) -> float:
    """Angular-average kernel ``int d^2u N(u) exp(-i u . z)``.

    ``c`` is the cosine between the dipole axis and the separation
    direction.  The closed trigonometric form is used away from zero; the
    removable singularity at z = 0 is handled by its power series, giving
    F(0, c) = 1.
    """
    z = float(z)
    c = float(c)
    if z < 0:
        raise ValueError("z must be >= 0")
    if not -1.0 <= c <= 1.0:
        raise ValueError("direction cosine must lie in [-1, 1]")
    c2 = c * c
    if z < _F_SERIES_CUTOFF:
        z2 = z * z
        sin_term = 1.0 - z2 / 6.0 + z2 * z2 / 120.0 - z2 * z2 * z2 / 5040.0
        # (z cos z - sin z)/z^3
        tail = -1.0 / 3.0 + z2 / 30.0 - z2 * z2 / 840.0 + z2 * z2 * z2 / 45360.0
        return 1.5 * ((1.0 - c2) * sin_term + (1.0 - 3.0 * c2) * tail)
    s, co = np.sin(z), np.cos(z)
    return 1.5 * ((1.0 - c2) * s / z + (1.0 - 3.0 * c2) * (co / z**2 - s / z**3))


def radiation_kernel_G(z: float, c: float) -> float:
    """Principal-value partner of F (the dipole-dipole kernel).

    Diverges like 1/z^3 as z -> 0, so strictly positive separations are
    required.
    """
    z = float(z)
    c = float(c)
    if z <= 0:
        raise ValueError("G(z) diverges at z = 0; need z > 0")
    if not -1.0 <= c <= 1.0:
        raise ValueError("direction cosine must lie in [-1, 1]")
    c2 = c * c
    s, co = np.sin(z), np.cos(z)
    return 0.75 * ((c2 - 1.0) * co / z + (1.0 - 3.0 * c2) * (s / z**2 + co / z**3))
