"""Instantaneous coagulation-fragmentation particle system.

n unit-weight particles carry frequencies on a dyadic grid.  Each ordered
pair of distinct particles (i, j) together with a catalyst particle l
(which may coincide with i or j) interacts at rate K(w_i, w_j, w_l) / n^2
per unordered pair, provided w_i + w_j >= w_l; the jump replaces (w_i, w_j)
by (w_i + w_j - w_l, w_l).  Particle count and total frequency are
conserved by every jump, exactly in grid-integer arithmetic.

Simulation is exact in law by majorant thinning: candidate events arrive
from a Poisson clock with rate R = S^3 / (2 n^2), S the current total
interaction weight; the candidate triple is drawn weight-proportionally
from a Fenwick table and accepted with probability K / (phi phi phi) when
admissible.  For the affine weight S is invariant across jumps (count and
energy conservation), so the majorant never drifts; for fractional weights
S is re-read from the table after each accepted jump.

The truncated variant confines particles to a window [0, B] with an
overflow scalar: interaction outputs beyond B and truncation-clock kills
move their weight into the overflow, conserving <phi, X> + Lambda exactly.
A coupled two-window driver shares one clock stream between nested windows
so the lower process is dominated by the upper one pathwise, atom by atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collision import grid_q_counting, q_counting
from .fenwick import FenwickTree
from .kernels import AFFINE, WeightFunction, check_submultiplicative
from .measures import DiscreteMeasure
from .trajectory import JumpEvent, MomentRecorder, Trajectory

__all__ = [
    "ParticleState",
    "ThinningError",
    "MaxEventsError",
    "make_rng",
    "init",
    "simulate",
    "simulate_truncated",
    "simulate_coupled",
    "simulate_exact_clocks",
    "extract_martingale",
]

_MASK64 = (1 << 64) - 1
_CHUNK = 128          # candidates drawn per batch between accepted events
_AUDIT_EVERY = 10_000  # cached-sum audit cadence, in accepted events


class ThinningError(RuntimeError):
    """Acceptance probability exceeded 1: the kernel is not dominated by
    the interaction weight on the reachable support."""


class MaxEventsError(RuntimeError):
    """Event log would exceed the configured cap."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) fully determines a run.

    Philox keyed with the two 64-bit words (seed, stream).  Replicas use
    consecutive stream ids on the same seed.
    """
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class ParticleState:
    """Multiset of n grid frequencies with the phi-weight Fenwick table.

    ``idx`` holds int64 grid indices per slot; dead slots (truncated runs
    only) are flagged in ``alive`` and carry zero table weight.  Cached
    ``sum_idx`` equals the alive integer frequency total at all times.
    """

    idx: np.ndarray
    h: float
    weight: WeightFunction
    fenwick: FenwickTree
    alive: np.ndarray
    sum_idx: int

    @staticmethod
    def build(idx, h: float, weight: WeightFunction = AFFINE) -> "ParticleState":
        idx = np.asarray(idx, dtype=np.int64)
        if h <= 0:
            raise ValueError("grid resolution h must be positive")
        if idx.min(initial=0) < 0:
            raise ValueError("frequencies must be nonnegative")
        phi = np.asarray(weight(idx * h), dtype=float)
        return ParticleState(idx.copy(), h, weight, FenwickTree(phi),
                             np.ones(len(idx), dtype=bool), int(idx.sum()))

    @property
    def n(self) -> int:
        return len(self.idx)

    @property
    def phi_total(self) -> float:
        return self.fenwick.total

    def positions(self) -> np.ndarray:
        return self.idx[self.alive] * self.h

    def measure(self) -> DiscreteMeasure:
        """Empirical measure (weight 1/n per particle), compacted."""
        live = self.idx[self.alive]
        return DiscreteMeasure.from_grid(live, np.full(len(live), 1.0 / self.n), self.h).compact()

    def copy(self) -> "ParticleState":
        return ParticleState(self.idx.copy(), self.h, self.weight,
                             FenwickTree(self.fenwick.leaf), self.alive.copy(), self.sum_idx)

    def apply_jump(self, i: int, j: int, l: int, time: float = 0.0) -> JumpEvent:
        """Apply the interior jump (i, j | l): slot i takes the output
        frequency, slot j the catalyst copy.  Count and sum are conserved
        exactly; the phi table is updated in place."""
        if i == j:
            raise ValueError("the interacting pair must be two distinct particles")
        vi, vj, vl = int(self.idx[i]), int(self.idx[j]), int(self.idx[l])
        out = vi + vj - vl
        if out < 0:
            raise ValueError("inadmissible triple: w_i + w_j < w_l")
        h = self.h
        before = (vi * h, vj * h, vl * h)
        self.idx[i] = out
        self.idx[j] = vl
        self.fenwick.set(i, float(self.weight(out * h)))
        self.fenwick.set(j, float(self.weight(vl * h)))
        return JumpEvent(time, i, j, l, before, (out * h, vl * h), "interior")

    def audit(self) -> None:
        """Verify the cached sums against recomputation."""
        live = self.idx[self.alive]
        assert int(live.sum()) == self.sum_idx, "cached frequency sum diverged"
        phi = np.zeros(self.n)
        phi[self.alive] = np.asarray(self.weight(live * self.h), dtype=float)
        if self.weight.is_affine:
            assert self.fenwick.total == float(phi.sum()), "phi table diverged"
        else:
            assert math.isclose(self.fenwick.total, float(phi.sum()),
                                rel_tol=1e-9), "phi table diverged"


def init(n: int, mu0: DiscreteMeasure, h: float, seed: int,
         weight: WeightFunction = AFFINE) -> ParticleState:
    """n i.i.d. samples from mu0 (normalised), quantised to the h-grid."""
    if n < 2:
        raise ValueError("n >= 2 required")
    if h <= 0:
        raise ValueError("grid resolution h must be positive")
    mu0 = mu0.compact()
    if len(mu0) == 0 or np.any(mu0.weights < 0):
        raise ValueError("initial measure must be nonnegative and nonzero")
    rng = make_rng(seed)
    cdf = np.cumsum(mu0.weights)
    cdf /= cdf[-1]
    picks = np.searchsorted(cdf, rng.random(n), side="right")
    idx = np.rint(mu0.positions[picks] / h).astype(np.int64)
    return ParticleState.build(idx, h, weight)


def _check_majorant(state: ParticleState, kernel, weight: WeightFunction) -> None:
    """Domination precheck on the reachable support envelope [0, E_tot]."""
    top = max(state.sum_idx * state.h, state.h)
    mesh = np.linspace(0.0, top, 12)
    triples = [(a, b, c) for a in mesh for b in mesh for c in mesh if a + b >= c]
    rep = check_submultiplicative(kernel, weight, triples)
    if not rep.passed:
        raise ThinningError(
            f"kernel is not dominated by the interaction weight on the reachable "
            f"support: K/(phi*phi*phi) = {rep.worst_residual:.6g} at witness {rep.witness}")


def _run_engine(state: ParticleState, kernel, weight: WeightFunction, t_end: float,
                rng: np.random.Generator, *, bound_idx: int | None = None,
                lam_scaled: float = 0.0, sample_times=None, record_events: bool = False,
                record_snapshots: bool = False, max_events: int = 10_000_000,
                audit: bool = True) -> Trajectory:
    n = state.n
    h = state.h
    kv = kernel.eval if hasattr(kernel, "eval") else kernel
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 17)
    recorder = MomentRecorder(sample_times, snapshots=record_snapshots)
    events: list[JumpEvent] | None = [] if record_events else None
    initial_idx = state.idx.copy() if record_events else None

    fw = state.fenwick
    # the overflow is tracked as n * Lambda: a running sum of exact phi
    # values, so <phi, X> + Lambda has an exactly invariant numerator
    truncated = bound_idx is not None
    affine = weight.is_affine
    inv2n2 = 1.0 / (2.0 * n * n)

    def observe():
        live = state.alive
        count = int(live.sum())
        phi_vals = np.asarray(weight(state.idx[live] * h), dtype=float)
        return (count / n, state.sum_idx * h / n, fw.total / n,
                float(np.sum(phi_vals * phi_vals)) / n,
                lam_scaled / n if truncated else np.nan,
                (fw.total + lam_scaled) / n,
                state.sum_idx,
                state.measure() if record_snapshots else None)

    t = 0.0
    n_events = 0
    s1 = fw.total
    r_pair = s1 * s1 * s1 * inv2n2
    while t < t_end:
        lam_f = lam_scaled / n
        r_kill = s1 * (lam_f * lam_f + 2.0 * lam_f * s1 / n) if truncated else 0.0
        r_total = r_pair + r_kill
        if r_total <= 0.0:
            break
        gaps = -np.log1p(-rng.random(_CHUNK)) / r_total
        times = t + np.cumsum(gaps)
        kill_mask = (rng.random(_CHUNK) < r_kill / r_total) if r_kill > 0.0 else np.zeros(_CHUNK, dtype=bool)
        tri_u = rng.random((_CHUNK, 3)) * s1
        acc_u = rng.random(_CHUNK)
        slots = fw.sample_batch(tri_u.ravel()).reshape(_CHUNK, 3)
        si, sj, sl = slots[:, 0], slots[:, 1], slots[:, 2]
        vi, vj, vl = state.idx[si], state.idx[sj], state.idx[sl]
        out = vi + vj - vl
        phis = fw.leaf[si] * fw.leaf[sj] * fw.leaf[sl]
        valid = (si != sj) & (out >= 0) & ~kill_mask & (phis > 0.0)
        kvals = np.where(valid, kv(vi * h, vj * h, vl * h), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc_p = np.where(valid, kvals / np.where(phis > 0, phis, 1.0), 0.0)
        if np.any(acc_p > 1.0 + 1e-12):
            c = int(np.argmax(acc_p))
            raise ThinningError(
                f"acceptance probability {acc_p[c]:.6g} > 1 at triple "
                f"({vi[c] * h:.17g}, {vj[c] * h:.17g}, {vl[c] * h:.17g}); "
                f"the kernel violates sub-multiplicativity on the reachable support")
        hit = kill_mask | (valid & (acc_u < acc_p))
        hits = np.nonzero(hit)[0]
        if len(hits) == 0:
            t = float(times[-1])
            continue
        c = int(hits[0])
        t_ev = float(times[c])
        if t_ev >= t_end:
            t = t_end
            break
        recorder.advance(t_ev, observe)
        t = t_ev
        if kill_mask[c]:
            victim = fw.sample(float(rng.random() * s1))
            v = int(state.idx[victim])
            lam_scaled += float(weight(v * h))
            state.alive[victim] = False
            state.sum_idx -= v
            fw.set(victim, 0.0)
            ev = JumpEvent(t_ev, victim, -1, -1, (v * h,), (), "kill")
        else:
            i, j, l = int(si[c]), int(sj[c]), int(sl[c])
            o, v3 = int(out[c]), int(vl[c])
            before = (float(vi[c]) * h, float(vj[c]) * h, v3 * h)
            if truncated and o > bound_idx:
                # output escapes the window: its phi-mass feeds the overflow
                lam_scaled += float(weight(o * h))
                state.idx[i] = v3
                fw.set(i, float(weight(v3 * h)))
                state.alive[j] = False
                state.sum_idx -= int(vi[c]) + int(vj[c]) - v3
                fw.set(j, 0.0)
                ev = JumpEvent(t_ev, i, j, l, before, (v3 * h,), "escape")
            else:
                state.idx[i] = o
                state.idx[j] = v3
                fw.set(i, float(weight(o * h)))
                fw.set(j, float(weight(v3 * h)))
                ev = JumpEvent(t_ev, i, j, l, before, (o * h, v3 * h), "interior")
        n_events += 1
        if events is not None:
            if n_events > max_events:
                raise MaxEventsError(f"event log exceeded the cap of {max_events} records")
            events.append(ev)
        if audit and n_events % _AUDIT_EVERY == 0:
            state.audit()
        if not affine or ev.branch != "interior":
            s1 = fw.total
            r_pair = s1 * s1 * s1 * inv2n2
    recorder.finish(observe)
    traj = recorder.build(truncated, events=events, initial_idx=initial_idx, n=n, h=h,
                          count=None)
    traj.meta = {"t_end": t_end, "weight": weight.spec_string(),
                 "kernel": kernel.spec_string() if hasattr(kernel, "spec_string") else "custom"}
    return traj


def simulate(state: ParticleState, kernel, weight: WeightFunction, t_end: float, *,
             seed: int = 0, stream: int = 0, sample_times=None,
             record_events: bool = False, record_snapshots: bool = False,
             max_events: int = 10_000_000, precheck: bool = True) -> Trajectory:
    """Run the untruncated process on a fresh copy of ``state``.

    Exact in law; (seed, stream) fully determines the trajectory.  Raises
    :class:`ThinningError` if the kernel is not dominated by the weight on
    the reachable support (checked up front on a mesh and per candidate).
    """
    if precheck:
        _check_majorant(state, kernel, weight)
    work = state.copy()
    return _run_engine(work, kernel, weight, t_end, make_rng(seed, stream),
                       sample_times=sample_times, record_events=record_events,
                       record_snapshots=record_snapshots, max_events=max_events)


def _outside_phi_scaled(state: ParticleState, bound: float) -> float:
    """n * <phi 1_{(bound, inf)}, X>: exact sum of the outside phi values."""
    outside = state.idx[state.alive] * state.h > bound
    vals = state.idx[state.alive][outside] * state.h
    return float(np.sum(np.asarray(state.weight(vals), dtype=float)))


def truncation_overflow_start(state: ParticleState, bound: float) -> float:
    """Canonical initial overflow: phi-mass of the particles beyond the window."""
    return _outside_phi_scaled(state, bound) / state.n


def simulate_truncated(state: ParticleState, bound: float, lam0: float | None, kernel,
                       weight: WeightFunction, t_end: float, *, seed: int = 0,
                       stream: int = 0, sample_times=None, record_events: bool = False,
                       record_snapshots: bool = False, precheck: bool = True) -> Trajectory:
    """Truncated process on the window [0, bound] with overflow lam0.

    ``state`` is the full initial configuration; particles beyond the
    window are dropped and must be covered by ``lam0``: the construction
    requires lam0 >= <phi 1_{B^c}, X_0> (otherwise the residual clock rate
    nu would be negative and the configuration is rejected).  ``lam0=None``
    selects the canonical cover exactly.  The affine weight is required;
    the overflow bookkeeping relies on phi-conservation.
    """
    if not weight.is_affine:
        raise ValueError("the truncated construction requires the affine weight")
    canonical_scaled = _outside_phi_scaled(state, bound)
    if lam0 is None:
        lam_scaled = canonical_scaled
    else:
        if lam0 < 0:
            raise ValueError("lam0 must be nonnegative")
        lam_scaled = lam0 * state.n
        if lam_scaled < canonical_scaled * (1.0 - 1e-12) - 1e-12:
            raise ValueError(
                f"nu^B < 0: overflow start {lam0!r} does not cover the phi-mass "
                f"{canonical_scaled / state.n!r} outside the window")
    if precheck:
        _check_majorant(state, kernel, weight)
    work = state.copy()
    bound_idx = int(math.floor(bound / work.h + 1e-9))
    outside = work.idx * work.h > bound
    for slot in np.nonzero(outside)[0]:
        work.alive[slot] = False
        work.sum_idx -= int(work.idx[slot])
        work.fenwick.set(int(slot), 0.0)
    return _run_engine(work, kernel, weight, t_end, make_rng(seed, stream),
                       bound_idx=bound_idx, lam_scaled=lam_scaled, sample_times=sample_times,
                       record_events=record_events, record_snapshots=record_snapshots)


def extract_martingale(traj: Trajectory, f, kernel) -> tuple[np.ndarray, np.ndarray]:
    """Martingale path M_t = <f, X_t> - <f, X_0> - int_0^t <f, Q^(n)(X_s)> ds.

    Requires an event-recorded untruncated trajectory; the time integral is
    exact because X is piecewise constant between jumps.  Returns the pair
    (times, M) evaluated at 0, both sides of every jump, and t_end.
    """
    if traj.events is None or traj.initial_idx is None:
        raise ValueError("trajectory must carry a full event log")
    n, h = traj.n, traj.h
    idx = traj.initial_idx.copy()
    t_end = float(traj.meta["t_end"])
    fast = hasattr(kernel, "rank_one_terms")

    # dense count vector over the grid, maintained incrementally together
    # with the active support window; f is cached on the extended grid and
    # re-evaluated only when the window grows
    top = int(idx.max())
    if top > 65536:
        raise ValueError(
            "martingale extraction needs a moderate grid extent (the drift "
            "integrand is a per-interval triple sum); rerun the simulation "
            "with a coarser resolution h")
    counts = np.bincount(idx, minlength=top + 1).astype(float)
    fvec = np.asarray(f(np.arange(2 * len(counts) - 1) * h), dtype=float)

    def grow(to_idx):
        nonlocal counts, fvec, top
        top = max(top, to_idx)
        if to_idx >= len(counts):
            bigger = np.zeros(2 * to_idx + 1)
            bigger[: len(counts)] = counts
            counts = bigger
            fvec = np.asarray(f(np.arange(2 * len(counts) - 1) * h), dtype=float)

    def drift_now():
        active = counts[: top + 1]
        # convolution route for large supports on manageable grid extents;
        # the direct route keeps the bracket cancellations bit-exact on
        # small supports
        m_active = int(np.count_nonzero(active))
        if fast and m_active > 32 and top <= 4096:
            return grid_q_counting(active / n, h, kernel, fvec, n)
        if m_active > 300:
            raise ValueError(
                "martingale drift would need a "
                f"{m_active}^3-term direct sum on a grid of extent {top}; "
                "rerun with a coarser resolution h")
        nz = np.nonzero(active)[0]
        meas = DiscreteMeasure.from_grid(nz, active[nz] / n, h)
        return float(q_counting(meas, kernel, f, n))

    times = [0.0]
    mvals = [0.0]
    # <f, X> accumulated in integer-count units and divided by n at the
    # end of each update: the per-jump increment is a 4-term sum of cached
    # f values, so conserved f cancel exactly along the path
    f_scaled = float(np.dot(fvec[: len(counts)], counts))
    f0 = f_scaled / n
    f_now = f0
    drift = drift_now()
    integral = 0.0
    t_prev = 0.0
    for ev in traj.events:
        if ev.branch != "interior":
            raise ValueError("martingale extraction is defined for the untruncated process")
        integral += (ev.time - t_prev) * drift
        # left limit of M at the jump
        times.append(ev.time)
        mvals.append(f_now - f0 - integral)
        i, j, l = ev.i, ev.j, ev.l
        vi, vj, vl = int(idx[i]), int(idx[j]), int(idx[l])
        out = vi + vj - vl
        idx[i] = out
        idx[j] = vl
        grow(out)
        counts[vi] -= 1.0
        counts[vj] -= 1.0
        counts[out] += 1.0
        counts[vl] += 1.0
        f_scaled += (fvec[out] + fvec[vl]) - (fvec[vi] + fvec[vj])
        f_now = f_scaled / n
        times.append(ev.time)
        mvals.append(f_now - f0 - integral)
        drift = drift_now()
        t_prev = ev.time
    integral += (t_end - t_prev) * drift
    times.append(t_end)
    mvals.append(f_now - f0 - integral)
    return np.asarray(times), np.asarray(mvals)


# --------------------------------------------------------------------------
# coupled nested-window driver
# --------------------------------------------------------------------------

_DEAD, _UPPER_ONLY, _BOTH = 0, 1, 2


def simulate_coupled(state: ParticleState, bound_lo: float, bound_hi: float, kernel,
                     weight: WeightFunction, t_end: float, *, seed: int = 0,
                     stream: int = 0, sample_times=None,
                     check_domination: bool = True) -> tuple[Trajectory, Trajectory]:
    """Both truncated processes for nested windows B in B' on one clock
    stream, so the lower process is dominated by the upper one pathwise.

    One shared event dictionary drives the pair: interaction clocks among
    upper-window particles act on both levels when the whole triple lives
    in the lower window and otherwise kill the lower level's pair members
    (shared-clock construction, so domination holds atom by atom at every
    event time); complement and residual clocks supply the remaining
    truncation kills at exactly the per-particle rate
    phi * (Lambda^2 + 2 Lambda <phi, X>) of each level.  Overflow starts
    are canonical, so <phi, X> + Lambda agree between levels at all times.
    """
    if not weight.is_affine:
        raise ValueError("the truncated construction requires the affine weight")
    if bound_lo > bound_hi:
        raise ValueError("bounds must be nested: bound_lo <= bound_hi")
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 17)
    _check_majorant(state, kernel, weight)
    kv = kernel.eval if hasattr(kernel, "eval") else kernel
    rng = make_rng(seed, stream)
    n = state.n
    h = state.h
    lo_idx = int(math.floor(bound_lo / h + 1e-9))
    hi_idx = int(math.floor(bound_hi / h + 1e-9))
    idx = state.idx.copy()
    status = np.full(n, _BOTH, dtype=np.int8)
    status[idx > hi_idx] = _DEAD
    status[(idx > lo_idx) & (idx <= hi_idx)] = _UPPER_ONLY

    def phi_of(v):
        return float(weight(v * h))

    # overflows tracked as n * Lambda (exact dyadic sums, see _run_engine)
    phi_all = np.asarray(weight(idx * h), dtype=float)
    lam_lo_s = float(np.sum(phi_all[status != _BOTH]))
    lam_hi_s = float(np.sum(phi_all[status == _DEAD]))

    rec_lo = MomentRecorder(sample_times, snapshots=True)
    rec_hi = MomentRecorder(sample_times, snapshots=True)

    def observe(level):
        sel = status == _BOTH if level == 0 else status >= _UPPER_ONLY
        lam_s = lam_lo_s if level == 0 else lam_hi_s
        live = idx[sel]
        phis = np.asarray(weight(live * h), dtype=float)
        meas = DiscreteMeasure.from_grid(live, np.full(len(live), 1.0 / n), h).compact()
        return (len(live) / n, float(live.sum()) * h / n, float(phis.sum()) / n,
                float(np.sum(phis * phis)) / n, lam_s / n,
                (float(phis.sum()) + lam_s) / n, int(live.sum()), meas)

    inv_n2 = 1.0 / (n * n)
    t = 0.0
    while t < t_end:
        phi_vec = np.asarray(weight(idx * h), dtype=float)
        phi_vec[status == _DEAD] = 0.0
        phi_hi = phi_vec.copy()
        phi_lo = np.where(status == _BOTH, phi_vec, 0.0)
        s1_hi = float(phi_hi.sum())
        s1_lo = float(phi_lo.sum())
        delta = (s1_hi - s1_lo) / n
        r_pair = s1_hi ** 3 * inv_n2 / 2.0
        lam_hi = lam_hi_s / n
        r_kill_hi = s1_hi * (lam_hi * lam_hi + 2.0 * lam_hi * s1_hi / n)
        r_extra_lo = delta / n * float(np.sum(phi_lo * phi_lo))
        r_total = r_pair + r_kill_hi + r_extra_lo
        if r_total <= 0.0:
            break
        t_ev = t - math.log1p(-float(rng.random())) / r_total
        if t_ev >= t_end:
            t = t_end
            break
        rec_lo.advance(t_ev, lambda: observe(0))
        rec_hi.advance(t_ev, lambda: observe(1))
        t = t_ev
        u_class = float(rng.random()) * r_total
        if u_class < r_pair:
            cum = np.cumsum(phi_hi)
            picks = np.searchsorted(cum, rng.random(3) * s1_hi, side="right")
            i, j, l = (int(p) for p in picks)
            if i == j or min(phi_hi[i], phi_hi[j], phi_hi[l]) <= 0.0:
                continue
            vi, vj, vl = int(idx[i]), int(idx[j]), int(idx[l])
            out = vi + vj - vl
            phis = phi_hi[i] * phi_hi[j] * phi_hi[l]
            k_here = float(kv(vi * h, vj * h, vl * h)) if out >= 0 else 0.0
            acc = k_here / phis if phis > 0 else 0.0
            if acc > 1.0 + 1e-12:
                raise ThinningError(
                    f"acceptance probability {acc:.6g} > 1 at triple "
                    f"({vi * h:.17g}, {vj * h:.17g}, {vl * h:.17g})")
            if float(rng.random()) < acc:
                # interaction clock fires for the upper window
                pair_in_lo = status[i] == _BOTH and status[j] == _BOTH
                all_in_lo = pair_in_lo and status[l] == _BOTH
                if not all_in_lo:
                    # lower level loses its pair members to the overflow
                    for s in (i, j):
                        if status[s] == _BOTH:
                            lam_lo_s += phi_of(int(idx[s]))
                new_status = _BOTH if all_in_lo else _UPPER_ONLY
                # catalyst copy replaces slot j
                idx[j] = vl
                status[j] = new_status
                # output replaces slot i, window permitting
                if out <= hi_idx:
                    idx[i] = out
                    if all_in_lo and out <= lo_idx:
                        status[i] = _BOTH
                    else:
                        status[i] = _UPPER_ONLY
                        if all_in_lo:
                            lam_lo_s += phi_of(out)
                else:
                    lam_hi_s += phi_of(out)
                    if all_in_lo:
                        lam_lo_s += phi_of(out)
                    status[i] = _DEAD
            else:
                # complement clock: null for the upper window, truncation
                # kill of the lower window's pair members unless the whole
                # triple lives inside it
                if not (status[i] == _BOTH and status[j] == _BOTH and status[l] == _BOTH):
                    for s in (i, j):
                        if status[s] == _BOTH:
                            lam_lo_s += phi_of(int(idx[s]))
                            status[s] = _UPPER_ONLY
        elif u_class < r_pair + r_kill_hi:
            cum = np.cumsum(phi_hi)
            victim = int(np.searchsorted(cum, float(rng.random()) * s1_hi, side="right"))
            v = int(idx[victim])
            lam_hi_s += phi_of(v)
            if status[victim] == _BOTH:
                lam_lo_s += phi_of(v)
            status[victim] = _DEAD
        else:
            w2 = phi_lo * phi_lo
            cum = np.cumsum(w2)
            victim = int(np.searchsorted(cum, float(rng.random()) * cum[-1], side="right"))
            lam_lo_s += phi_of(int(idx[victim]))
            status[victim] = _UPPER_ONLY
        if check_domination:
            _assert_dominated(idx, status)
    rec_lo.finish(lambda: observe(0))
    rec_hi.finish(lambda: observe(1))
    traj_lo = rec_lo.build(True, n=n, h=h)
    traj_hi = rec_hi.build(True, n=n, h=h)
    for tr, b in ((traj_lo, bound_lo), (traj_hi, bound_hi)):
        tr.meta = {"t_end": t_end, "bound": b, "weight": weight.spec_string()}
    return traj_lo, traj_hi


def _assert_dominated(idx, status) -> None:
    lower = np.sort(idx[status == _BOTH])
    upper = np.sort(idx[status >= _UPPER_ONLY])
    # every lower atom must embed into the upper multiset
    pos = np.searchsorted(upper, lower, side="right")
    if np.any(pos - np.arange(1, len(lower) + 1) < 0):
        raise AssertionError("pathwise domination violated")


# --------------------------------------------------------------------------
# exact per-triple-clock reference (law-level oracle, small n only)
# --------------------------------------------------------------------------

def simulate_exact_clocks(state: ParticleState, kernel, weight: WeightFunction,
                          t_end: float, *, seed: int = 0, stream: int = 0,
                          sample_times=None, record_snapshots: bool = False) -> Trajectory:
    """Gillespie simulation with the full per-triple rate table.

    O(n^3) work per event; intended as the law-level oracle for the
    thinning engine at small n.
    """
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 17)
    work = state.copy()
    n, h = work.n, work.h
    kv = kernel.eval if hasattr(kernel, "eval") else kernel
    rng = make_rng(seed, stream)
    recorder = MomentRecorder(sample_times, snapshots=record_snapshots)

    def observe():
        phis = np.asarray(weight(work.idx * h), dtype=float)
        return (1.0, work.sum_idx * h / n, float(phis.sum()) / n,
                float(np.sum(phis * phis)) / n, np.nan, float(phis.sum()) / n,
                work.sum_idx,
                work.measure() if record_snapshots else None)

    iu, ju = np.triu_indices(n, k=1)
    t = 0.0
    while t < t_end:
        vi = work.idx[iu][:, None] * h
        vj = work.idx[ju][:, None] * h
        vl = work.idx[None, :] * h
        rates = kv(vi, vj, vl) * ((vi + vj) >= vl) / (n * n)
        flat = rates.ravel()
        total = float(flat.sum())
        if total <= 0.0:
            break
        t_ev = t - math.log1p(-float(rng.random())) / total
        if t_ev >= t_end:
            break
        recorder.advance(t_ev, observe)
        t = t_ev
        pick = int(np.searchsorted(np.cumsum(flat), float(rng.random()) * total, side="right"))
        pair, l = divmod(pick, n)
        work.apply_jump(int(iu[pair]), int(ju[pair]), int(l), t_ev)
    recorder.finish(observe)
    traj = recorder.build(False, n=n, h=h)
    traj.meta = {"t_end": t_end}
    return traj
