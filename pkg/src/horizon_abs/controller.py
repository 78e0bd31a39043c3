"""Saturated auxiliary dynamics, transition feedback laws and their integration.

A transition is specified by a cell configuration (own cell plus the
neighbors' cells), a free parameter w in the ball of radius v_max, and
the initial state inside the own cell.  The feedback law cancels the
own dynamics against a reference trajectory driven by frozen neighbor
reference points, steers toward the reference endpoint shifted by
lambda*w*t, and corrects the initial cell offset.  Below saturation the
resulting auxiliary trajectory has an exact closed form, which this
module both implements and uses as a numerical cross-check.
"""

from dataclasses import dataclass

import numpy as np

from . import integrate, model as model_mod
from .errors import ModelError

DISTURBANCE_KNOTS = 8


def saturate(v, bound):
    """Radial projection onto the closed ball of the given radius."""
    v = np.asarray(v, dtype=float)
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norms > bound, bound / np.maximum(norms, 1e-300), 1.0)
    return v * scale


def eval_g(agent, x_i, x_j):
    """The globally bounded field: the raw dynamics saturated at M."""
    return saturate(model_mod.eval_f(agent, x_i, x_j), agent.M)


def r_i(lam, dt, v_max):
    return lam * dt * v_max


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    agent_id: int
    config: tuple
    own_ref: np.ndarray
    nbr_refs: np.ndarray
    traj: integrate.DenseTrajectory
    audit_err: float

    @property
    def endpoint(self):
        return self.traj.endpoint

    def eval(self, t):
        return self.traj.eval(t)


def integrate_reference(
    agent,
    own_ref,
    nbr_refs,
    dt,
    substeps=integrate.DEFAULT_SUBSTEPS,
    integ_tol=integrate.DEFAULT_INTEG_TOL,
    config=None,
):
    """Solve the reference dynamics from the own reference point.

    The neighbor block is frozen at the neighbors' reference points for
    the whole interval, so the reference depends only on the cell
    configuration, never on the continuous state.
    """
    own_ref = np.asarray(own_ref, dtype=float)
    nbr_refs = np.asarray(nbr_refs, dtype=float)

    def rhs(t, y):
        return eval_g(agent, y, nbr_refs)

    traj = integrate.rk4_dense(rhs, own_ref, dt, substeps)
    err = integrate.check_audit(
        rhs, own_ref, dt, substeps, integ_tol, what=f"reference of agent {agent.id}"
    )
    return ReferenceTrajectory(
        agent_id=agent.id,
        config=config,
        own_ref=own_ref,
        nbr_refs=nbr_refs,
        traj=traj,
        audit_err=err,
    )


def reference_endpoints(agent, own_refs, nbr_refs, dt, substeps=integrate.DEFAULT_SUBSTEPS):
    """Endpoints only, batched over configurations (no dense storage, no audit)."""

    def rhs(t, y):
        return eval_g(agent, y, nbr_refs)

    return integrate.rk4_endpoint(rhs, own_refs, dt, substeps)


def select_w(endpoint, x, lam, dt, v_max):
    """Recover the parameter steering the transition endpoint to x."""
    x = np.asarray(x, dtype=float)
    radius = r_i(lam, dt, v_max)
    gap = float(np.sqrt(np.sum((x - endpoint) ** 2)))
    if gap > radius * (1 + 1e-9):
        raise ModelError(
            f"target point at distance {gap} outside the endpoint ball of radius {radius}"
        )
    if lam == 0 or dt == 0:
        if gap > 0:
            raise ModelError("lambda=0 admits only the reference endpoint itself")
        return np.zeros_like(x)
    w = (x - endpoint) / (lam * dt)
    wn = float(np.sqrt(np.sum(w * w)))
    if wn > v_max:
        w = w * (v_max / wn)
    return w


@dataclass(frozen=True, eq=False)
class TransitionControl:
    agent: object
    reference: ReferenceTrajectory
    x_G: np.ndarray
    x0: np.ndarray
    w: np.ndarray
    lam: float
    dt: float

    def kbar(self, t, x_i, d_j):
        k1 = eval_g(self.agent, self.reference.eval(t), self.reference.nbr_refs) - eval_g(
            self.agent, x_i, d_j
        )
        k2 = self.lam * self.w
        k3 = (self.x_G - self.x0) / self.dt
        return k1 + k2 + k3

    def k(self, t, x_i, d_j):
        return saturate(self.kbar(t, x_i, d_j), self.agent.v_max)


def closed_form_endpoint(ctrl, t):
    """The exact auxiliary solution below saturation."""
    if not -1e-12 <= t <= ctrl.dt + 1e-12:
        raise ModelError(f"t={t} outside [0, {ctrl.dt}]")
    drift = (ctrl.dt - t) / ctrl.dt * (ctrl.x0 - ctrl.x_G)
    return drift + ctrl.lam * ctrl.w * t + ctrl.reference.eval(t)


@dataclass(frozen=True, eq=False)
class AuxResult:
    endpoint: np.ndarray
    kbar_max: float
    audit_err: float


def integrate_auxiliary(
    ctrl,
    disturbance,
    substeps=integrate.DEFAULT_SUBSTEPS,
    integ_tol=integrate.DEFAULT_INTEG_TOL,
):
    """Closed-loop auxiliary endpoint under a realized disturbance path.

    ``disturbance`` maps t to the concatenated neighbor block.  The
    maximum sampled feedback magnitude is reported so callers can assert
    that saturation stayed inactive.
    """
    record = {"max": 0.0, "track": True}

    def rhs(t, z):
        d = disturbance(t)
        u_bar = ctrl.kbar(t, z, d)
        if record["track"]:
            record["max"] = max(record["max"], float(np.sqrt(np.sum(u_bar * u_bar))))
        return eval_g(ctrl.agent, z, d) + saturate(u_bar, ctrl.agent.v_max)

    endpoint = integrate.rk4_endpoint(rhs, ctrl.x0, ctrl.dt, substeps)
    record["track"] = False
    fine = integrate.rk4_endpoint(rhs, ctrl.x0, ctrl.dt, 2 * substeps)
    err = float(np.max(np.abs(endpoint - fine))) * (16.0 / 15.0)
    if err > integ_tol:
        raise integrate.IntegrationError(
            f"auxiliary integration audit {err:.3e} exceeds tolerance {integ_tol:.3e}"
        )
    return AuxResult(endpoint=endpoint, kbar_max=record["max"], audit_err=err)


class PiecewiseLinearPath:
    def __init__(self, ts, values):
        self.ts = np.asarray(ts, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def eval(self, t):
        t = float(np.clip(t, self.ts[0], self.ts[-1]))
        k = int(np.searchsorted(self.ts, t, side="right")) - 1
        k = min(max(k, 0), len(self.ts) - 2)
        span = self.ts[k + 1] - self.ts[k]
        theta = 0.0 if span == 0 else (t - self.ts[k]) / span
        return (1 - theta) * self.values[k] + theta * self.values[k + 1]

    __call__ = eval


def sample_in_cell(dec, lattice, rng, max_tries=1000):
    """Uniform draw from the clipped cell; deterministic fallback for slivers."""
    lo, hi = dec.box(lattice)
    for _ in range(max_tries):
        p = lo + (hi - lo) * rng.random(dec.dim)
        if dec.region.contains(p):
            return p
    from . import grid

    p = grid.witness_in_cell_ball(dec, lattice, dec.region)
    if p is None:
        raise ModelError(f"cell {lattice} has no representative point in the region")
    return p


def sample_disturbance(dec, lattice, c_rate, dt, rng, knots=DISTURBANCE_KNOTS):
    """A continuous realization staying inside the growing neighbor tube.

    Knot k is a cell point plus a ball sample of radius c_rate * t_k; the
    linear interpolants remain inside the tube because the cross-section
    is convex and grows linearly in t.
    """
    ts = np.linspace(0.0, dt, knots)
    values = np.empty((knots, dec.dim))
    for k, t in enumerate(ts):
        base = sample_in_cell(dec, lattice, rng)
        radius = c_rate * t
        if radius > 0:
            direction = rng.standard_normal(dec.dim)
            norm = float(np.sqrt(np.sum(direction**2)))
            direction = direction / max(norm, 1e-300)
            offset = direction * radius * rng.random() ** (1.0 / dec.dim)
        else:
            offset = np.zeros(dec.dim)
        values[k] = base + offset
    return PiecewiseLinearPath(ts, values)
