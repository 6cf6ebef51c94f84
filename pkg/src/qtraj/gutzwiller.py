"""Trajectory propagation in the site-factorized (Gutzwiller) ansatz.

Each trajectory is a product state ``prod_l sum_n f_n^(l) |n>_l``.  The
tunnelling term couples sites only through the mean fields
``psi_l = sum_{j|l} <a_j>``, so a step evolves every site under a local
effective Hamiltonian; on-site dissipators (dephasing, one-body loss)
preserve the product form exactly, and one global jump decision is made per
step.  Ensembles of such trajectories capture classical correlations that a
single product state cannot.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .catalog import Dissipator
from .errors import TrajectoryAbort
from .stats import EnsembleAccumulator, finalize, merge
from .trajectory import DEFAULT_CHUNK_SIZE, RngStream, _chunk_bounds, _select_channel

DELTA_P_WARN = 0.1


@dataclass(frozen=True)
class GwParams:
    """Lattice and dissipator parameters for the mean-field backend.

    Single sites are allowed (no neighbours, so the mean field vanishes);
    only on-site dissipators are supported, since non-local jumps would
    break the product ansatz.
    """

    sites: int
    n_max: int
    J: float
    U: float = 0.0
    eps: tuple | None = None
    boundary: str = "open"
    dissipator: Dissipator | None = None

    def __post_init__(self):
        if self.sites < 1 or self.n_max < 1:
            raise ValueError("need sites >= 1 and n_max >= 1")
        if self.boundary not in ("open", "periodic"):
            raise ValueError("boundary must be 'open' or 'periodic'")
        if self.eps is not None and len(self.eps) != self.sites:
            raise ValueError("eps must have one offset per site")
        if self.dissipator is not None and self.dissipator.kind not in ("dephasing", "one_body"):
            raise ValueError("gutzwiller backend supports on-site dephasing or one-body loss")

    def neighbours(self, l: int) -> tuple[int, ...]:
        out = []
        if l - 1 >= 0:
            out.append(l - 1)
        if l + 1 < self.sites:
            out.append(l + 1)
        if self.boundary == "periodic" and self.sites > 2:
            if l == 0:
                out.append(self.sites - 1)
            if l == self.sites - 1:
                out.append(0)
        return tuple(out)


@dataclass(eq=False)
class GutzwillerState:
    """Per-site coefficient rows ``f[l, n]``, each row normalized."""

    f: np.ndarray  # (sites, n_max + 1) complex
    t: float = 0.0
    jump_log: list = field(default_factory=list)

    @property
    def sites(self) -> int:
        return self.f.shape[0]

    def copy(self) -> "GutzwillerState":
        return GutzwillerState(f=self.f.copy(), t=self.t, jump_log=list(self.jump_log))


def product_fock(params: GwParams, occupations) -> GutzwillerState:
    f = np.zeros((params.sites, params.n_max + 1), dtype=np.complex128)
    for l, n in enumerate(occupations):
        if not 0 <= int(n) <= params.n_max:
            raise ValueError(f"occupation {n} outside 0..{params.n_max}")
        f[l, int(n)] = 1.0
    return GutzwillerState(f=f)


def product_amplitudes(params: GwParams, amplitudes) -> GutzwillerState:
    f = np.asarray(amplitudes, dtype=np.complex128)
    if f.shape != (params.sites, params.n_max + 1):
        raise ValueError(f"amplitudes must have shape {(params.sites, params.n_max + 1)}")
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise ValueError("every site needs a nonzero amplitude vector")
    return GutzwillerState(f=f / norms[:, None])


def site_expect_a(f_row: np.ndarray) -> complex:
    """<a> for one site: sum_n sqrt(n+1) conj(f_n) f_{n+1}."""
    n_max = f_row.shape[0] - 1
    roots = np.sqrt(np.arange(1, n_max + 1))
    return complex(np.sum(np.conj(f_row[:-1]) * f_row[1:] * roots))


def site_density(f_row: np.ndarray) -> float:
    ns = np.arange(f_row.shape[0])
    return float(np.sum(ns * np.abs(f_row) ** 2))


def mean_fields(state: GutzwillerState, params: GwParams) -> np.ndarray:
    """``psi_l = sum over neighbours j of <a_j>``, recomputed from scratch."""
    a_vals = np.array([site_expect_a(state.f[l]) for l in range(params.sites)])
    return np.array([a_vals[list(params.neighbours(l))].sum() if params.neighbours(l) else 0.0 for l in range(params.sites)])


class _GwWorkspace:
    """Precomputed local operators for one parameter set."""

    def __init__(self, params: GwParams):
        self.params = params
        d = params.n_max + 1
        ns = np.arange(d, dtype=float)
        self.num_diag = ns
        self.numsq_diag = ns**2
        self.int_diag = 0.5 * params.U * ns * (ns - 1.0)
        self.lower = np.diag(np.sqrt(np.arange(1, d)), k=1)  # a
        self.raise_ = self.lower.conj().T
        diss = params.dissipator
        self.kind = diss.kind if diss is not None else None
        self.rates = np.array(
            [diss.site_rate(l) for l in range(params.sites)] if diss is not None else [0.0] * params.sites
        )

    def jump_weights(self, f: np.ndarray) -> np.ndarray:
        """Per-site <c^dag c>: gamma <n^2> for dephasing, Gamma <n> for loss."""
        if self.kind is None:
            return np.zeros(self.params.sites)
        probs = np.abs(f) ** 2
        if self.kind == "dephasing":
            return self.rates * (probs @ self.numsq_diag)
        return self.rates * (probs @ self.num_diag)

    def apply_jump_site(self, f_row: np.ndarray) -> np.ndarray:
        if self.kind == "dephasing":
            out = self.num_diag * f_row
        else:
            out = self.lower @ f_row
        w = np.linalg.norm(out)
        if w == 0.0:
            raise TrajectoryAbort("jump selected on a site with zero channel weight")
        return out / w

    def local_heff(self, psi_l: complex, eps_l: float, rate_l: float) -> np.ndarray:
        """-J(psi a^dag + psi* a) + (U/2)(a^dag)^2 a^2 + eps n - (i/2) c^dag c."""
        p = self.params
        h = np.diag((self.int_diag + eps_l * self.num_diag).astype(np.complex128))
        if p.J != 0 and psi_l != 0:
            h = h - p.J * (psi_l * self.raise_ + np.conj(psi_l) * self.lower)
        if self.kind == "dephasing":
            h = h - 0.5j * np.diag(rate_l * self.numsq_diag)
        elif self.kind == "one_body":
            h = h - 0.5j * np.diag(rate_l * self.num_diag)
        return h


def gw_step(state: GutzwillerState, params: GwParams, dt: float, rng: np.random.Generator, workspace: _GwWorkspace | None = None) -> GutzwillerState:
    """One first-order step of the stochastic Gutzwiller evolution.

    Mean fields are frozen at the step start (the update is explicit, so
    the O(dt) ambiguity of self-consistency within a step is resolved by
    freezing).  A single global jump decision covers all sites, with site
    probabilities ``dt * rate * <c_l^dag c_l>``; a dephasing jump multiplies
    the site row by n, a loss jump applies the lowering operator.
    """
    ws = workspace or _GwWorkspace(params)
    weights = ws.jump_weights(state.f) * dt
    total = float(weights.sum())
    if total > DELTA_P_WARN:
        warnings.warn(f"per-step jump probability {total:.3g} > {DELTA_P_WARN}", stacklevel=2)
    r1 = rng.random()
    t_next = state.t + dt
    f = state.f.copy()
    if r1 < total:
        l = _select_channel(weights, rng.random())
        f[l] = ws.apply_jump_site(f[l])
        label = ("deph_" if ws.kind == "dephasing" else "loss1_") + str(l + 1)
        return GutzwillerState(f=f, t=t_next, jump_log=state.jump_log + [(t_next, label)])

    psi = mean_fields(state, params)
    eps = params.eps if params.eps is not None else (0.0,) * params.sites
    for l in range(params.sites):
        h = ws.local_heff(psi[l], eps[l], ws.rates[l])
        row = f[l] - 1j * dt * (h @ f[l])
        f[l] = row / np.linalg.norm(row)
    return GutzwillerState(f=f, t=t_next, jump_log=state.jump_log)


# ---------------------------------------------------------------------------
# observables on product states


@dataclass(frozen=True)
class GwObservable:
    name: str
    fn: object

    def sample(self, state: GutzwillerState) -> complex:
        return complex(self.fn(state))


def gw_observable(params: GwParams, name: str) -> GwObservable:
    """Site-local and product-factorizable observables by name.

    Names (1-based sites): ``n_<l>``, ``a_<l>``, ``total_n``,
    ``nn_<l>_<j>`` (the product ``<n_l><n_j>`` per trajectory; ensemble
    averages of it estimate ``<n_l n_j>`` including classical
    correlations).
    """
    parts = name.split("_")
    if name == "total_n":
        return GwObservable(name, lambda s: sum(site_density(s.f[l]) for l in range(s.sites)))
    if parts[0] == "n" and len(parts) == 2:
        l = int(parts[1]) - 1
        return GwObservable(name, lambda s: site_density(s.f[l]))
    if parts[0] == "a" and len(parts) == 2:
        l = int(parts[1]) - 1
        return GwObservable(name, lambda s: site_expect_a(s.f[l]))
    if parts[0] == "nn" and len(parts) == 3:
        l, j = int(parts[1]) - 1, int(parts[2]) - 1
        if l == j:
            raise KeyError("nn_<l>_<j> requires distinct sites in the product ansatz")
        return GwObservable(name, lambda s: site_density(s.f[l]) * site_density(s.f[j]))
    raise KeyError(f"unknown gutzwiller observable {name!r}")


def run_gw_trajectory(params: GwParams, state0: GutzwillerState, report_times, observables, dt: float, rng_stream: RngStream):
    ws = _GwWorkspace(params)
    gen = rng_stream.generator()
    state = state0.copy()
    samples = np.zeros((len(report_times), len(observables)), dtype=np.complex128)
    for k, t_rep in enumerate(report_times):
        span = float(t_rep) - state.t
        if span < -1e-12:
            raise ValueError("report_times must be increasing")
        if span > 1e-15:
            n_steps = max(1, int(np.ceil(span / dt - 1e-9)))
            h = span / n_steps
            for _ in range(n_steps):
                state = gw_step(state, params, h, gen, ws)
            state.t = float(t_rep)
        for j, obs in enumerate(observables):
            samples[k, j] = obs.sample(state)
    return samples, tuple(state.jump_log)


def _run_gw_chunk(task):
    params, state0, report_times, observables, dt, base_seed, lo, hi = task
    acc = EnsembleAccumulator(n_times=len(report_times), n_observables=len(observables))
    aborted = []
    for i in range(lo, hi):
        try:
            samples, _ = run_gw_trajectory(params, state0, report_times, observables, dt, RngStream(base_seed, i))
        except TrajectoryAbort as exc:
            aborted.append((i, str(exc)))
            continue
        acc.add_sample(samples)
    return acc, aborted


def run_gw_ensemble(
    params: GwParams,
    state0: GutzwillerState,
    report_times,
    observables,
    n_traj: int,
    base_seed: int,
    *,
    dt: float,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
):
    """Ensemble of stochastic product-state trajectories.

    Same statistics and determinism contract as the exact-basis ensemble:
    trajectory ``i`` uses the stream ``(base_seed, i)`` and fixed chunks
    merge in order, independent of the worker count.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    report_times = [float(t) for t in report_times]
    observables = list(observables)
    tasks = [
        (params, state0, report_times, observables, dt, base_seed, lo, hi)
        for lo, hi in _chunk_bounds(n_traj, chunk_size)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_gw_chunk, tasks))
    else:
        results = [_run_gw_chunk(t) for t in tasks]
    total, aborted = results[0]
    aborted = list(aborted)
    for acc, ab in results[1:]:
        total = merge(total, acc)
        aborted.extend(ab)
    if aborted:
        warnings.warn(f"{len(aborted)} trajectories aborted and were excluded", stacklevel=2)
    if total.count == 0:
        raise TrajectoryAbort("all trajectories aborted; no samples to average")
    metadata = {
        "base_seed": base_seed,
        "scheme": "gutzwiller_first_order",
        "model": "bose_hubbard/gutzwiller",
        "n_traj": n_traj,
        "aborted": len(aborted),
        "aborted_ids": [i for i, _ in aborted],
        "chunk_size": chunk_size,
    }
    return finalize(total, report_times, [o.name for o in observables], metadata)
