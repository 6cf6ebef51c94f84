"""Lindblad models: Hamiltonian plus labelled jump operators, rates folded in.

A model is a list of particle-number sectors.  Number-conserving problems
(driven two-level atom, dephasing) have a single sector; loss problems carry
one sector per reachable particle number, with rectangular jump operators
mapping a sector into its loss target.  Each sector caches its effective
Hamiltonian ``H - (i/2) sum_m c_m^dag c_m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import OccupationBasis
from .errors import DimensionMismatchError
from .linalg import Operator


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """One dissipative channel: ``op`` already includes the sqrt(rate) factor.

    ``target`` is the index of the sector the jump maps into; equal to the
    owning sector's index for number-conserving jumps.
    """

    label: str
    op: Operator
    target: int = 0


@dataclass(eq=False)
class Sector:
    """One particle-number sector: Hamiltonian, channels, optional basis."""

    h: Operator
    channels: list[JumpChannel] = field(default_factory=list)
    basis: OccupationBasis | None = None
    label: str = ""
    _h_eff: Operator | None = field(default=None, init=False, repr=False)
    _no_jump_prop: object = field(default=None, init=False, repr=False)  # per-process cache

    @property
    def dim(self) -> int:
        return self.h.dim_in

    @property
    def h_eff(self) -> Operator:
        if self._h_eff is None:
            self._h_eff = _effective_hamiltonian(self.h, [ch.op for ch in self.channels])
        return self._h_eff


@dataclass(eq=False)
class LindbladModel:
    """Hamiltonian + labelled jump operators over one or more number sectors.

    Immutable after construction by convention; safe to share across
    workers.  ``sectors[start]`` is where trajectories begin; single-sector
    models expose ``h``, ``jumps`` and ``dim`` directly.
    """

    sectors: list[Sector]
    start: int = 0
    label: str = ""

    def __post_init__(self):
        for s, sector in enumerate(self.sectors):
            if sector.h.dim_in != sector.h.dim_out:
                raise DimensionMismatchError(f"sector {s}: Hamiltonian must be square")
            for ch in sector.channels:
                if ch.op.dim_in != sector.dim:
                    raise DimensionMismatchError(
                        f"jump '{ch.label}' expects dim {ch.op.dim_in}, sector {s} has dim {sector.dim}"
                    )
                if not 0 <= ch.target < len(self.sectors):
                    raise DimensionMismatchError(f"jump '{ch.label}' targets unknown sector {ch.target}")
                if ch.op.dim_out != self.sectors[ch.target].dim:
                    raise DimensionMismatchError(
                        f"jump '{ch.label}' maps into dim {ch.op.dim_out}, "
                        f"target sector has dim {self.sectors[ch.target].dim}"
                    )

    @property
    def dim(self) -> int:
        return self.sectors[self.start].dim

    @property
    def h(self) -> Operator:
        return self.sectors[self.start].h

    @property
    def jumps(self) -> list[JumpChannel]:
        return self.sectors[self.start].channels

    @property
    def h_eff(self) -> Operator:
        return self.sectors[self.start].h_eff

    @property
    def multi_sector(self) -> bool:
        return len(self.sectors) > 1


def single_sector_model(h: Operator, jumps, label: str = "", basis: OccupationBasis | None = None) -> LindbladModel:
    """Build a one-sector model from ``(label, operator)`` pairs."""
    channels = [JumpChannel(lbl, op, target=0) for lbl, op in jumps]
    return LindbladModel(sectors=[Sector(h=h, channels=channels, basis=basis)], label=label)


def _effective_hamiltonian(h: Operator, jump_ops) -> Operator:
    acc = h.matrix.copy().astype(np.complex128)
    for c in jump_ops:
        acc = acc - 0.5j * (c.matrix.conj().T @ c.matrix)
    return Operator(acc.tocsr())


def effective_hamiltonian(model: LindbladModel, sector: int | None = None) -> Operator:
    """``H - (i/2) sum_m c_m^dag c_m`` for the given (default: start) sector."""
    return model.sectors[model.start if sector is None else sector].h_eff


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    failures: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.passed


def validate(model: LindbladModel) -> ValidationReport:
    """Check Hermiticity of H, dimensional consistency and label uniqueness.

    Collects diagnostics instead of raising, so a report can cover several
    defects at once.
    """
    failures: list[str] = []
    for s, sector in enumerate(model.sectors):
        m = sector.h.matrix
        if m.shape[0] != m.shape[1]:
            failures.append(f"sector {s}: H is {m.shape[0]}x{m.shape[1]}, not square")
            continue
        diff = abs(m - m.conj().T)
        scale = max(abs(m).max() if m.nnz else 0.0, 1e-300)
        if diff.nnz and diff.max() > 1e-12 * scale:
            k = int(np.argmax(diff.toarray())) if m.shape[0] <= 512 else diff.argmax()
            i, j = divmod(k, m.shape[1])
            failures.append(
                f"sector {s}: H not Hermitian, max |H - H^dag| = {diff.max():.3e} at entry ({i},{j})"
            )
        labels = [ch.label for ch in sector.channels]
        dupes = {lbl for lbl in labels if labels.count(lbl) > 1}
        if dupes:
            failures.append(f"sector {s}: duplicate jump labels {sorted(dupes)}")
        for ch in sector.channels:
            if ch.op.dim_in != sector.dim or ch.op.dim_out != model.sectors[ch.target].dim:
                failures.append(
                    f"sector {s}: jump '{ch.label}' has shape "
                    f"{ch.op.dim_out}x{ch.op.dim_in}, expected "
                    f"{model.sectors[ch.target].dim}x{sector.dim}"
                )
    return ValidationReport(passed=not failures, failures=tuple(failures))


def transform_jumps(model: LindbladModel, t_op: Operator, unitary_atol: float = 1e-10) -> LindbladModel:
    """Replace each jump ``c_m`` by ``d_m = T^dag c_m T``, keeping H.

    The transformed set generates the identical master equation whenever T
    commutes with the dissipator's conjugation action; that equivalence is a
    test-level property, only unitarity is enforced here.  Single-sector
    models only.
    """
    if model.multi_sector:
        raise DimensionMismatchError("transform_jumps supports single-sector models")
    if t_op.dim_in != model.dim:
        raise DimensionMismatchError("transformation dimension mismatch")
    probe = (t_op.dag() @ t_op).to_dense()
    if np.abs(probe - np.eye(model.dim)).max() > unitary_atol:
        raise ValueError("transformation is not unitary within tolerance")
    td = t_op.dag()
    new_jumps = [(ch.label, Operator((td.matrix @ ch.op.matrix @ t_op.matrix).tocsr())) for ch in model.jumps]
    return single_sector_model(model.h, new_jumps, label=model.label, basis=model.sectors[0].basis)


@dataclass(frozen=True, eq=False)
class FlatModel:
    """Single-space embedding of a multi-sector model (for the dense oracle).

    ``offsets[s]`` is the row/column offset of sector ``s`` inside the
    direct-sum space; H is block-diagonal and each jump becomes a block
    mapping its sector onto its target.
    """

    model: LindbladModel
    offsets: tuple[int, ...]
    dim: int
    h: Operator
    jumps: tuple[tuple[str, Operator], ...]
    h_eff: Operator

    def embed_state(self, v: np.ndarray, sector: int) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.complex128)
        off = self.offsets[sector]
        out[off : off + v.shape[0]] = v
        return out

    def embed_operator(self, op: Operator, sector: int, hermitian: bool | None = None) -> Operator:
        """Block-diagonal embedding acting as ``op`` on one sector, zero elsewhere."""
        blocks = []
        for s, sec in enumerate(self.model.sectors):
            if s == sector:
                blocks.append(op.matrix)
            else:
                blocks.append(sp.csr_matrix((sec.dim, sec.dim), dtype=np.complex128))
        m = sp.block_diag(blocks, format="csr")
        return Operator(m, hermitian=op.hermitian if hermitian is None else hermitian)

    def embed_everywhere(self, ops: dict[int, Operator], hermitian: bool = False) -> Operator:
        """Block-diagonal embedding from per-sector operators (missing = zero)."""
        blocks = []
        for s, sec in enumerate(self.model.sectors):
            if s in ops:
                blocks.append(ops[s].matrix)
            else:
                blocks.append(sp.csr_matrix((sec.dim, sec.dim), dtype=np.complex128))
        return Operator(sp.block_diag(blocks, format="csr"), hermitian=hermitian)


def flatten_sectors(model: LindbladModel) -> FlatModel:
    """Embed all sectors into one direct-sum space with block jump operators."""
    dims = [s.dim for s in model.sectors]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = int(offsets[-1])
    h = sp.block_diag([s.h.matrix for s in model.sectors], format="csr")
    jumps = []
    for s, sector in enumerate(model.sectors):
        for ch in sector.channels:
            m = sp.lil_matrix((total, total), dtype=np.complex128)
            r0 = offsets[ch.target]
            c0 = offsets[s]
            m[r0 : r0 + ch.op.dim_out, c0 : c0 + ch.op.dim_in] = ch.op.matrix
            jumps.append((f"{ch.label}" if not model.multi_sector else f"{ch.label}@s{s}", Operator(m.tocsr())))
    h_op = Operator(h, hermitian=True)
    return FlatModel(
        model=model,
        offsets=tuple(int(o) for o in offsets[:-1]),
        dim=total,
        h=h_op,
        jumps=tuple(jumps),
        h_eff=_effective_hamiltonian(h_op, [op for _, op in jumps]),
    )
