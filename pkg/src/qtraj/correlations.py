"""Two-time correlations ``C(t, tau) = <A(t+tau) B(t)>`` from trajectories.

At time ``t`` each trajectory spawns four helper states built from
``(1 +/- B)psi`` and ``(1 +/- iB)psi``; propagating those with the same
stochastic scheme and combining the four expectation values of ``A``
reconstructs an unbiased sample of the correlation function, which the
quantum regression theorem defines through the master equation.  The dense
oracle counterpart is :func:`qtraj.oracle.two_time_oracle`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TrajectoryAbort
from .linalg import Operator, apply, norm
from .model import LindbladModel
from .stats import EnsembleAccumulator, finalize
from .trajectory import Observable, RngStream, StepConfig, TrajectoryState, _walk_first_order, _walk_jump_time

DEGENERATE_MU = 1e-12

_HELPER_ORDER = ("R+", "R-", "I+", "I-")


@dataclass(frozen=True, eq=False)
class HelperSet:
    """Four normalized helper states and their squared-norm weights.

    Members with mu ~ 0 (e.g. ``(1 - B)psi`` for ``B = 1``) are flagged
    degenerate: they carry zero weight and are skipped in propagation.
    """

    chis: tuple
    mus: tuple[float, float, float, float]

    @property
    def degenerate(self) -> tuple[bool, ...]:
        return tuple(mu <= DEGENERATE_MU for mu in self.mus)


def build_helpers(psi_t: np.ndarray, b_op: Operator) -> HelperSet:
    """Helper states ``(1 +/- B)psi`` and ``(1 +/- iB)psi`` at the probe time."""
    if abs(norm(psi_t) - 1.0) > 1e-9:
        raise ValueError("helper construction requires a normalized state")
    b_psi = apply(b_op, psi_t)
    raw = (
        psi_t + b_psi,
        psi_t - b_psi,
        psi_t + 1j * b_psi,
        psi_t - 1j * b_psi,
    )
    mus = tuple(float(np.vdot(v, v).real) for v in raw)
    chis = tuple(
        v / np.sqrt(mu) if mu > DEGENERATE_MU else np.zeros_like(v) for v, mu in zip(raw, mus)
    )
    return HelperSet(chis=chis, mus=mus)


def reconstruct(mus, cs) -> complex:
    """Combine the four helper samples into one correlation sample.

    ``C = (mu_R+ c_R+ - mu_R- c_R- - i mu_I+ c_I+ + i mu_I- c_I-) / 4``
    with the fixed member order (R+, R-, I+, I-).
    """
    if len(mus) != 4 or len(cs) != 4:
        raise ValueError("reconstruct expects four weights and four samples")
    return 0.25 * (mus[0] * cs[0] - mus[1] * cs[1] - 1j * mus[2] * cs[2] + 1j * mus[3] * cs[3])


def ensemble_two_time(
    model: LindbladModel,
    psi0,
    t: float,
    tau_grid,
    a_obs: Observable,
    b_op: Operator,
    n_traj: int,
    base_seed: int,
    *,
    config: StepConfig | None = None,
):
    """Trajectory estimate of ``C(t, tau)`` on the tau grid.

    Each trajectory propagates to ``t`` with stream ``(base_seed, i)``,
    builds its helper set, and propagates every non-degenerate helper with
    its own derived substream ``(base_seed, i, 1 + helper)`` so the four
    continuations stay statistically independent.  Means and standard
    errors are taken over trajectories.
    """
    if model.multi_sector:
        raise ValueError("two-time estimation expects a single-sector model")
    config = config or StepConfig()
    tau_grid = [float(x) for x in tau_grid]
    walker = _walk_first_order if config.scheme == "first_order" else _walk_jump_time
    acc = EnsembleAccumulator(n_times=len(tau_grid), n_observables=1)
    aborted = 0
    for i in range(n_traj):
        stream = RngStream(base_seed, i)
        try:
            sample = _one_two_time_sample(model, psi0, t, tau_grid, a_obs, b_op, config, stream, walker)
        except TrajectoryAbort:
            aborted += 1
            continue
        acc.add_sample(sample.reshape(-1, 1))
    if aborted:
        warnings.warn(f"{aborted} two-time trajectories aborted and were excluded", stacklevel=2)
    return finalize(
        acc,
        tau_grid,
        [f"C[{a_obs.name}]"],
        {"base_seed": base_seed, "t": t, "n_traj": n_traj, "aborted": aborted},
    )


def _one_two_time_sample(model, psi0, t, tau_grid, a_obs, b_op, config, stream, walker):
    parent_end = {}

    def keep_last(_k, state):
        parent_end["state"] = TrajectoryState(
            psi=state.psi.copy(), t=state.t, jump_log=list(state.jump_log), sector=state.sector
        )

    walker(model, psi0, [float(t)], config, stream.generator(), keep_last)
    psi_t = parent_end["state"].psi
    helpers = build_helpers(psi_t, b_op)
    cs = np.zeros((4, len(tau_grid)), dtype=np.complex128)
    for h, (chi, mu) in enumerate(zip(helpers.chis, helpers.mus)):
        if mu <= DEGENERATE_MU:
            continue
        rows = np.zeros(len(tau_grid), dtype=np.complex128)

        def on_report(k, state, rows=rows):
            rows[k] = a_obs.sample(state.psi, state.sector)

        walker(model, chi, tau_grid, config, stream.child(1 + h).generator(), on_report)
        cs[h] = rows
    return np.array([reconstruct(helpers.mus, cs[:, k]) for k in range(len(tau_grid))])
