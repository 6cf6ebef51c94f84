"""Stochastic wavefunction propagation and ensemble orchestration.

Two schemes are provided.  The first-order stepper alternates Euler steps
under the effective Hamiltonian with stochastic jump decisions of
probability ``delta_p = dt * sum_m <c_m^dag c_m>`` per step.  The jump-time
scheme removes the first-order bias: it draws a survival threshold ``r``,
propagates exactly under ``exp(-i H_eff t)``, solves ``|exp(-i H_eff t1)
psi|^2 = r`` for the jump time, and applies the jump there.

Ensembles are embarrassingly parallel.  Trajectory ``i`` owns the random
stream keyed by ``(base_seed, i)``; work is partitioned into fixed-size
chunks whose accumulators merge in chunk order, so results are
byte-identical for any worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CoarseStepWarning, RootFindingError, TrajectoryAbort
from .linalg import FixedGeneratorPropagator, Operator, apply, norm
from .model import LindbladModel, Sector, flatten_sectors
from .stats import EnsembleAccumulator, EnsembleResult, finalize, merge

DEFAULT_CHUNK_SIZE = 32
DELTA_P_WARN = 0.1
_MAX_BISECTIONS = 200


@dataclass(frozen=True)
class RngStream:
    """Reproducible per-trajectory random stream.

    Keyed by ``(base_seed, stream_id, *sub)`` through a SeedSequence spawn
    key feeding a counter-based Philox generator: the same key gives the
    same sequence on every platform and worker layout, different keys give
    statistically independent streams.  ``sub`` levels derive helper-state
    streams from a parent trajectory.
    """

    base_seed: int
    stream_id: int
    sub: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.base_seed, spawn_key=(self.stream_id, *self.sub))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *sub: int) -> "RngStream":
        return RngStream(self.base_seed, self.stream_id, self.sub + tuple(sub))


@dataclass(frozen=True)
class StepConfig:
    """Numerical knobs for trajectory propagation.

    ``dt`` is the first-order step; ``dt_report`` seeds the search stride of
    the jump-time root finder (defaults to the report-grid spacing);
    ``root_tol`` bounds ``|norm^2(t1) - r|`` at the accepted jump time.
    """

    scheme: str = "jump_time"
    dt: float | None = None
    dt_report: float | None = None
    propagator_tol: float = 1e-9
    root_tol: float = 1e-10

    def __post_init__(self):
        if self.scheme not in ("first_order", "jump_time"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "first_order":
            if self.dt is None or self.dt <= 0:
                raise ValueError("first_order scheme requires dt > 0")
        if self.propagator_tol <= 0 or self.root_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.dt_report is not None and self.dt_report <= 0:
            raise ValueError("dt_report must be > 0")


@dataclass
class TrajectoryState:
    """Normalized pure state, current time, jump record, sector cursor."""

    psi: np.ndarray
    t: float = 0.0
    jump_log: list = field(default_factory=list)
    sector: int = 0


@dataclass(frozen=True)
class JumpAt:
    time: float


@dataclass(frozen=True)
class NoJumpBefore:
    time: float


@dataclass(frozen=True, eq=False)
class TrajectoryResult:
    samples: np.ndarray  # (n_times, n_observables) complex
    jump_log: tuple


@dataclass(frozen=True, eq=False)
class Observable:
    """Named observable with one operator per sector it is defined on.

    Sampling in a sector without an entry yields 0 (e.g. occupancy counts
    in the vacuum sector after losses).
    """

    name: str
    ops: dict[int, Operator]

    @staticmethod
    def single(name: str, op: Operator) -> "Observable":
        return Observable(name, {0: op})

    def sample(self, psi: np.ndarray, sector: int) -> complex:
        op = self.ops.get(sector)
        if op is None:
            return 0.0 + 0.0j
        return complex(np.vdot(psi, op.matrix @ psi))


def _normalized(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=np.complex128)
    n = norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def _no_jump_generator(sector: Sector) -> Operator:
    return Operator((-1j) * sector.h_eff.matrix)


def _no_jump_propagator(sector: Sector, tol: float) -> FixedGeneratorPropagator:
    prop = sector._no_jump_prop
    if prop is None or prop.tol > tol:
        prop = FixedGeneratorPropagator(_no_jump_generator(sector), tol=tol)
        sector._no_jump_prop = prop
    return prop


def delta_p(model: LindbladModel, psi: np.ndarray, dt: float, sector: int | None = None):
    """Per-channel jump probabilities ``dt * <c_m^dag c_m>`` and their total.

    Warns when the total exceeds 0.1: the first-order method systematically
    overestimates jump rates at coarse steps, so that regime is surfaced
    rather than silently accepted.
    """
    sec = model.sectors[model.start if sector is None else sector]
    per_channel = np.array([norm(apply(ch.op, psi)) ** 2 * dt for ch in sec.channels])
    total = float(per_channel.sum())
    if total > DELTA_P_WARN:
        warnings.warn(
            f"delta_p = {total:.3g} > {DELTA_P_WARN}; first-order step too coarse",
            CoarseStepWarning,
            stacklevel=2,
        )
    return total, per_channel


def _select_channel(weights: np.ndarray, r: float) -> int:
    """Cumulative-interval choice: intervals proportional to the weights."""
    total = weights.sum()
    edges = np.cumsum(weights) / total
    return int(np.searchsorted(edges, r, side="right").clip(0, len(weights) - 1))


def step_first_order(
    state: TrajectoryState,
    model: LindbladModel,
    config: StepConfig,
    rng: np.random.Generator,
    dt: float | None = None,
) -> TrajectoryState:
    """One first-order step: Euler no-jump update or a stochastic jump.

    Draws ``r1``; below the total jump probability a channel is chosen by
    cumulative intervals against a second draw ``r2`` and the (normalized)
    jumped state is logged, otherwise the state advances under
    ``(1 - i H_eff dt)``.  The returned state is renormalized exactly; the
    division by sqrt(1 - delta_p) equals that normalization to first order.
    """
    h = config.dt if dt is None else dt
    sec = model.sectors[state.sector]
    total, per_channel = delta_p(model, state.psi, h, sector=state.sector)
    r1 = rng.random()
    t_next = state.t + h
    if r1 < total:
        r2 = rng.random()
        m = _select_channel(per_channel, r2)
        ch = sec.channels[m]
        phi = apply(ch.op, state.psi)
        w = norm(phi)
        if w == 0.0:
            raise TrajectoryAbort(
                f"jump channel '{ch.label}' selected but c|psi> = 0 (inconsistent delta_p)"
            )
        return TrajectoryState(
            psi=phi / w,
            t=t_next,
            jump_log=state.jump_log + [(t_next, ch.label)],
            sector=ch.target,
        )
    phi = state.psi - 1j * h * (sec.h_eff.matrix @ state.psi)
    return TrajectoryState(psi=phi / norm(phi), t=t_next, jump_log=state.jump_log, sector=state.sector)


def survival_propagate(model: LindbladModel, psi: np.ndarray, t0: float, t1: float, tol: float = 1e-9, sector: int | None = None):
    """Unnormalized no-jump evolution ``exp(-i H_eff (t1-t0)) psi``.

    Returns ``(phi, norm^2)``; the squared norm is the probability that no
    jump occurred in the interval, monotonically non-increasing in ``t1``.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    sec = model.sectors[model.start if sector is None else sector]
    phi = _no_jump_propagator(sec, tol).apply(np.asarray(psi, dtype=np.complex128), t1 - t0)
    return phi, float(np.vdot(phi, phi).real)


def _bisect_crossing(prop: FixedGeneratorPropagator, psi_hat: np.ndarray, h: float, target: float, root_tol: float):
    """Find dt in (0, h] with ``|exp(-i H_eff dt) psi_hat|^2 = target``.

    Assumes the survival at h is already <= target (a crossing exists as
    norm^2 decreases monotonically from 1).  Evaluations propagate from the
    bracket start to keep cost bounded.  Returns (dt, phi_at_dt, q_at_dt).
    """
    lo, hi = 0.0, h
    phi_hi = prop.apply(psi_hat, h)
    q_hi = float(np.vdot(phi_hi, phi_hi).real)
    best = (h, phi_hi, q_hi)
    for _ in range(_MAX_BISECTIONS):
        if abs(best[2] - target) <= root_tol:
            return best
        mid = 0.5 * (lo + hi)
        phi = prop.apply(psi_hat, mid)
        q = float(np.vdot(phi, phi).real)
        if abs(q - target) < abs(best[2] - target):
            best = (mid, phi, q)
        if q > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(h, 1.0):
            break
    if abs(best[2] - target) <= root_tol:
        return best
    raise RootFindingError(
        f"jump-time refinement stagnated: |norm^2 - r| = {abs(best[2] - target):.3e} > {root_tol:.1e}",
        achieved=abs(best[2] - target),
    )


def sample_jump_time(
    model: LindbladModel,
    state: TrajectoryState,
    r: float,
    t_max: float,
    config: StepConfig,
):
    """Solve ``|exp(-i H_eff (t1 - t0)) psi|^2 = r`` for the next jump time.

    Advances in strides (``dt_report`` if set, else the remaining interval)
    with step doubling until the survival drops below ``r``, then refines
    the crossing by bisection to ``root_tol`` on the squared norm.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie strictly between 0 and 1")
    sec = model.sectors[state.sector]
    prop = _no_jump_propagator(sec, config.propagator_tol)
    span = t_max - state.t
    if span <= 0:
        return NoJumpBefore(t_max)
    h = config.dt_report if config.dt_report is not None else span
    psi_hat = _normalized(state.psi)
    t_off = 0.0
    s = 1.0  # survival accumulated since state.t
    while t_off < span * (1 - 1e-15):
        h = min(h, span - t_off)
        phi = prop.apply(psi_hat, h)
        q = float(np.vdot(phi, phi).real)
        if s * q > r:
            s *= q
            psi_hat = phi / np.sqrt(q)
            t_off += h
            h *= 2.0
            continue
        dt_cross, _, _ = _bisect_crossing(prop, psi_hat, h, r / s, config.root_tol)
        return JumpAt(state.t + t_off + dt_cross)
    return NoJumpBefore(t_max)


def apply_jump(state: TrajectoryState, model: LindbladModel, rng: np.random.Generator) -> TrajectoryState:
    """Apply one quantum jump at the state's current time.

    The channel is sampled with probability proportional to
    ``<psi|c_m^dag c_m|psi>``; the state is replaced by the normalized
    jumped state and the sector cursor advances if the channel changes
    particle number.
    """
    sec = model.sectors[state.sector]
    if not sec.channels:
        raise TrajectoryAbort("apply_jump called on a model without jump channels")
    jumped = [apply(ch.op, state.psi) for ch in sec.channels]
    weights = np.array([np.vdot(p, p).real for p in jumped])
    total = weights.sum()
    if total <= 0.0:
        raise TrajectoryAbort("all jump-channel weights vanish; no jump possible")
    m = _select_channel(weights, rng.random())
    ch = sec.channels[m]
    phi = jumped[m]
    return TrajectoryState(
        psi=phi / np.sqrt(weights[m]),
        t=state.t,
        jump_log=state.jump_log + [(state.t, ch.label)],
        sector=ch.target,
    )


def _walk_first_order(model, psi0, report_times, config, rng, on_report):
    state = TrajectoryState(psi=_normalized(psi0), t=0.0, jump_log=[], sector=model.start)
    dt = config.dt
    for k, t_rep in enumerate(report_times):
        span = float(t_rep) - state.t
        if span < -1e-12:
            raise ValueError("report_times must be increasing")
        if span > 1e-15:
            n_steps = max(1, int(np.ceil(span / dt - 1e-9)))
            h = span / n_steps
            for _ in range(n_steps):
                state = step_first_order(state, model, config, rng, dt=h)
            state.t = float(t_rep)
        on_report(k, state)
    return state


def _walk_jump_time(model, psi0, report_times, config, rng, on_report):
    state = TrajectoryState(psi=_normalized(psi0), t=0.0, jump_log=[], sector=model.start)
    props = {}

    def prop_for(sector_index):
        if sector_index not in props:
            props[sector_index] = _no_jump_propagator(model.sectors[sector_index], config.propagator_tol)
        return props[sector_index]

    r = rng.random()
    s = 1.0  # survival since the last jump (or t=0)
    for k, t_rep in enumerate(report_times):
        t_target = float(t_rep)
        if t_target < state.t - 1e-12:
            raise ValueError("report_times must be increasing")
        while state.t < t_target - 1e-15:
            h = t_target - state.t
            prop = prop_for(state.sector)
            phi = prop.apply(state.psi, h)
            q = float(np.vdot(phi, phi).real)
            if s * q > r:
                s *= q
                state.psi = phi / np.sqrt(q)
                state.t = t_target
                break
            # a jump occurs inside (state.t, t_target]
            dt_cross, phi_c, q_c = _bisect_crossing(prop, state.psi, h, r / s, config.root_tol)
            state.psi = phi_c / np.sqrt(q_c)
            state.t = state.t + dt_cross
            state = apply_jump(state, model, rng)
            r = rng.random()
            s = 1.0
        on_report(k, state)
    return state


def run_trajectory(model, psi0, report_times, observables, config: StepConfig, rng_stream: RngStream) -> TrajectoryResult:
    """Propagate one trajectory, sampling observables at the report times."""
    observables = list(observables)
    samples = np.zeros((len(report_times), len(observables)), dtype=np.complex128)

    def on_report(k, state):
        for j, obs in enumerate(observables):
            samples[k, j] = obs.sample(state.psi, state.sector)

    walker = _walk_first_order if config.scheme == "first_order" else _walk_jump_time
    end = walker(model, psi0, list(report_times), config, rng_stream.generator(), on_report)
    return TrajectoryResult(samples=samples, jump_log=tuple(end.jump_log))


def _chunk_bounds(n_traj: int, chunk_size: int):
    return [(a, min(a + chunk_size, n_traj)) for a in range(0, n_traj, chunk_size)]


def _run_chunk(task):
    (model, psi0, report_times, observables, config, base_seed, lo, hi, collect_logs) = task
    acc = EnsembleAccumulator(n_times=len(report_times), n_observables=len(observables))
    aborted = []
    logs = []
    for i in range(lo, hi):
        try:
            res = run_trajectory(model, psi0, report_times, observables, config, RngStream(base_seed, i))
        except TrajectoryAbort as exc:
            aborted.append((i, str(exc)))
            continue
        acc.add_sample(res.samples)
        if collect_logs:
            logs.append((i, res.jump_log))
    return acc, aborted, logs


def run_ensemble(
    model,
    psi0,
    report_times,
    observables,
    n_traj: int,
    base_seed: int,
    *,
    config: StepConfig | None = None,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    collect_jump_logs: bool = False,
) -> EnsembleResult:
    """Average ``n_traj`` trajectories with per-trajectory streams.

    Trajectory ``i`` always uses ``RngStream(base_seed, i)`` and work is
    split into fixed chunks merged in order, so the output is a pure
    function of ``(model, psi0, report_times, observables, config,
    n_traj, base_seed)`` regardless of ``workers``.  Aborted trajectories
    are excluded from the statistics and counted in the metadata.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    config = config or StepConfig()
    observables = list(observables)
    report_times = [float(t) for t in report_times]
    tasks = [
        (model, psi0, report_times, observables, config, base_seed, lo, hi, collect_jump_logs)
        for lo, hi in _chunk_bounds(n_traj, chunk_size)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    total = results[0][0]
    aborted = list(results[0][1])
    logs = list(results[0][2])
    for acc, ab, lg in results[1:]:
        total = merge(total, acc)
        aborted.extend(ab)
        logs.extend(lg)
    if aborted:
        warnings.warn(f"{len(aborted)} trajectories aborted and were excluded", stacklevel=2)
    if total.count == 0:
        raise TrajectoryAbort("all trajectories aborted; no samples to average")
    metadata = {
        "base_seed": base_seed,
        "scheme": config.scheme,
        "model": model.label,
        "n_traj": n_traj,
        "aborted": len(aborted),
        "aborted_ids": [i for i, _ in aborted],
        "chunk_size": chunk_size,
    }
    if collect_jump_logs:
        metadata["jump_logs"] = logs
    return finalize(total, report_times, [o.name for o in observables], metadata)


@dataclass(frozen=True, eq=False)
class DensityEnsemble:
    """Trajectory-averaged projectors with per-element standard errors."""

    times: np.ndarray
    mean: list  # dense (dim, dim) per report time
    elem_stderr: list  # same shapes, combined re/im standard error
    n: int


def run_ensemble_density(
    model,
    psi0,
    report_times,
    n_traj: int,
    base_seed: int,
    *,
    config: StepConfig | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> DensityEnsemble:
    """Average ``|psi><psi|`` over trajectories at each report time.

    Multi-sector states are embedded in the direct-sum space so the result
    is comparable with the flattened oracle density matrix.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    config = config or StepConfig()
    report_times = [float(t) for t in report_times]
    flat = flatten_sectors(model) if model.multi_sector else None
    dim = flat.dim if flat is not None else model.dim
    s_rho = [np.zeros((dim, dim), dtype=np.complex128) for _ in report_times]
    s_sq_re = [np.zeros((dim, dim)) for _ in report_times]
    s_sq_im = [np.zeros((dim, dim)) for _ in report_times]

    def on_report(k, state):
        psi = state.psi if flat is None else flat.embed_state(state.psi, state.sector)
        proj = np.outer(psi, psi.conj())
        s_rho[k] += proj
        s_sq_re[k] += proj.real**2
        s_sq_im[k] += proj.imag**2

    walker = _walk_first_order if config.scheme == "first_order" else _walk_jump_time
    n_ok = 0
    for i in range(n_traj):
        try:
            walker(model, psi0, report_times, config, RngStream(base_seed, i).generator(), on_report)
            n_ok += 1
        except TrajectoryAbort:
            continue
    if n_ok == 0:
        raise TrajectoryAbort("all trajectories aborted")
    mean = [s / n_ok for s in s_rho]
    stderr = []
    for k in range(len(report_times)):
        var_re = np.clip((s_sq_re[k] - mean[k].real**2 * n_ok) / max(n_ok - 1, 1), 0, None)
        var_im = np.clip((s_sq_im[k] - mean[k].imag**2 * n_ok) / max(n_ok - 1, 1), 0, None)
        stderr.append(np.sqrt((var_re + var_im) / n_ok))
    return DensityEnsemble(times=np.asarray(report_times), mean=mean, elem_stderr=stderr, n=n_ok)
