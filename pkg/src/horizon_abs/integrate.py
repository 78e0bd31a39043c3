"""Fixed-step classical RK4 with dense cubic-Hermite output.

Adaptive steppers are deliberately avoided: a fixed grid keeps every
trajectory bit-reproducible across runs, which the artifact contract
relies on.  Accuracy is audited after the fact by a step-halving
Richardson estimate instead of being controlled online.
"""

import numpy as np

from .errors import IntegrationError

DEFAULT_SUBSTEPS = 100
DEFAULT_INTEG_TOL = 1e-8


def rk4_endpoint(rhs, y0, dt, substeps):
    """Endpoint of y' = rhs(t, y) on [0, dt]; y0 may carry leading batch axes."""
    y = np.array(y0, dtype=float)
    h = dt / substeps
    t = 0.0
    for k in range(substeps):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + (h / 2) * k1)
        k3 = rhs(t + h / 2, y + (h / 2) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = (k + 1) * h
    return y


class DenseTrajectory:
    """Node values plus derivatives on a uniform grid, interpolated cubically."""

    def __init__(self, ts, ys, ds):
        self.ts = ts
        self.ys = ys
        self.ds = ds

    @property
    def endpoint(self):
        return self.ys[-1]

    @property
    def dt(self):
        return float(self.ts[-1])

    def eval(self, t):
        ts = self.ts
        if not -1e-12 <= t <= ts[-1] + 1e-12:
            raise IntegrationError(f"t={t} outside [0, {ts[-1]}]")
        h = ts[1] - ts[0]
        k = min(int(max(t, 0.0) / h), len(ts) - 2)
        s = (t - ts[k]) / h
        y0, y1 = self.ys[k], self.ys[k + 1]
        d0, d1 = self.ds[k], self.ds[k + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def rk4_dense(rhs, y0, dt, substeps):
    """Integrate and keep every node with its derivative for interpolation."""
    y = np.array(y0, dtype=float)
    h = dt / substeps
    ts = np.linspace(0.0, dt, substeps + 1)
    ys = np.empty((substeps + 1,) + y.shape)
    ds = np.empty_like(ys)
    ys[0] = y
    for k in range(substeps):
        t = ts[k]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + (h / 2) * k1)
        k3 = rhs(t + h / 2, y + (h / 2) * k2)
        k4 = rhs(t + h, y + h * k3)
        ds[k] = k1
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k + 1] = y
    ds[substeps] = rhs(ts[-1], y)
    return DenseTrajectory(ts, ys, ds)


def audit_endpoint_error(rhs, y0, dt, substeps):
    """Richardson estimate of the endpoint error of the substeps-step run.

    Halving the step scales the RK4 global error roughly 16-fold, so the
    error of the run we actually return (the coarse one) is about 16/15
    of the coarse-fine endpoint gap.
    """
    coarse = rk4_endpoint(rhs, y0, dt, substeps)
    fine = rk4_endpoint(rhs, y0, dt, 2 * substeps)
    return float(np.max(np.abs(coarse - fine))) * (16.0 / 15.0)


def check_audit(rhs, y0, dt, substeps, integ_tol, what="integration"):
    err = audit_endpoint_error(rhs, y0, dt, substeps)
    if err > integ_tol:
        raise IntegrationError(
            f"{what}: step-halving audit estimate {err:.3e} exceeds "
            f"tolerance {integ_tol:.3e}; raise substeps"
        )
    return err
