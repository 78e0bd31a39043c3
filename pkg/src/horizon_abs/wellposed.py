"""Admissible time-step and cell-diameter intervals, and their synthesis.

The bounds implemented here are the sufficient conditions under which
every initiating cell admits a deterministic transition with the
feedback law kept strictly below its saturation level.  Both intervals
are open, so synthesized values back off from the suprema by a margin
factor.
"""

import math
from dataclasses import dataclass, replace

from .errors import InfeasibleError, ModelError

DEFAULT_LAMBDA = 0.4
DEFAULT_MARGIN = 0.999
_AUTO_HEADROOM = 0.9


@dataclass(frozen=True)
class DiscretizationParams:
    dt: float
    steps: int
    lam: dict
    mu: dict
    d_max: dict
    margin: float

    def with_scaled_dmax(self, agent_id, factor):
        d_max = dict(self.d_max)
        d_max[agent_id] = d_max[agent_id] * factor
        return replace(self, d_max=d_max)


def mu_norm(model, params, agent_id):
    agent = model.agent(agent_id)
    return math.sqrt(sum(params.mu[(j, agent_id)] ** 2 for j in agent.neighbors))


def M_norm(model, agent_id):
    agent = model.agent(agent_id)
    return math.sqrt(
        sum((model.agent(j).M + model.agent(j).v_max) ** 2 for j in agent.neighbors)
    )


def dt_bound(model, params, agent_id):
    """Supremum of admissible time steps for one agent; inf when unconstrained."""
    agent = model.agent(agent_id)
    lam = params.lam[agent_id]
    denom = agent.L1 * M_norm(model, agent_id) + agent.L2 * lam * agent.v_max
    if denom <= 0:
        return math.inf
    return (1 - lam) * agent.v_max / denom


def dmax_bound(model, params, agent_id, dt):
    """Supremum of admissible cell diameters at a given time step."""
    sup_dt = dt_bound(model, params, agent_id)
    if not 0 < dt < sup_dt:
        raise InfeasibleError(
            f"agent {agent_id}: dt={dt} outside the admissible interval (0, {sup_dt})"
        )
    agent = model.agent(agent_id)
    lam = params.lam[agent_id]
    mu_i = mu_norm(model, params, agent_id)
    M_i = M_norm(model, agent_id)
    lead = 2 * (1 - lam) * agent.v_max * dt
    branch_a = lead / (1 + (agent.L1 * mu_i + agent.L2) * dt)
    branch_b = (lead - 2 * (agent.L1 * M_i + agent.L2 * lam * agent.v_max) * dt**2) / (
        1 + agent.L1 * mu_i * dt
    )
    return min(branch_a, branch_b)


def _simple_cycles(edges, nodes):
    adj = {v: sorted(i for (j, i) in edges if j == v) for v in nodes}
    cycles = []

    def dfs(start, v, path, on_path):
        for w in adj[v]:
            if w < start:
                continue
            if w == start:
                cycles.append(tuple(path))
            elif w not in on_path:
                on_path.add(w)
                dfs(start, w, path + [w], on_path)
                on_path.remove(w)

    for s in sorted(nodes):
        dfs(s, s, [s], {s})
    return cycles


def check_cycles(model, params):
    """Every simple coupling cycle must carry a mu-product of at least 1."""
    violations = []
    for cycle in _simple_cycles(model.edges(), model.agent_ids):
        product = 1.0
        for k, j in enumerate(cycle):
            i = cycle[(k + 1) % len(cycle)]
            product *= params.mu[(j, i)]
        if product < 1:
            violations.append(f"cycle {cycle}: mu product {product} < 1")
    return violations


def check_params(model, params, tau):
    """Strict re-validation of a parameter choice; returns violation strings."""
    violations = []
    if params.dt <= 0:
        violations.append(f"dt={params.dt} must be positive")
        return violations
    if params.dt >= tau:
        violations.append(f"dt={params.dt} must be strictly below tau={tau}")
    for agent in model.agents:
        i = agent.id
        lam = params.lam[i]
        if not 0 <= lam < 1:
            violations.append(f"agent {i}: lambda={lam} outside [0, 1)")
            continue
        sup_dt = dt_bound(model, params, i)
        if params.dt >= sup_dt:
            violations.append(
                f"agent {i}: dt={params.dt} is not strictly below its bound {sup_dt}"
            )
            continue
        sup_d = dmax_bound(model, params, i, params.dt)
        d = params.d_max[i]
        if not 0 < d < sup_d:
            violations.append(
                f"agent {i}: d_max={d} is not strictly inside (0, {sup_d})"
            )
    for (j, i) in model.edges():
        lhs = params.d_max.get(j)
        rhs = params.mu[(j, i)] * params.d_max.get(i, 0.0)
        if lhs is None or lhs > rhs * (1 + 1e-12):
            violations.append(
                f"edge ({j} -> {i}): d_max({j})={lhs} exceeds mu*d_max({i})={rhs}"
            )
    violations.extend(check_cycles(model, params))
    return violations


def synthesize(model, lam=None, mu=None, steps=None, margin=DEFAULT_MARGIN, steps_cap=100000):
    """Pick (dt, steps, d_max) satisfying every admissibility constraint strictly.

    With an explicit ``steps`` the request is honored or rejected as
    infeasible; otherwise the step count is searched upward until the
    common time step clears every agent's bound and tau.
    """
    if margin <= 0:
        raise ModelError(f"margin must be positive, got {margin}")
    lam = {a.id: DEFAULT_LAMBDA for a in model.agents} | dict(lam or {})
    mu = {e: 1.0 for e in model.edges()} | dict(mu or {})
    for i, value in lam.items():
        if not 0 <= value < 1:
            raise InfeasibleError(f"agent {i}: lambda={value} outside [0, 1)")
    for e, value in mu.items():
        if value < 0:
            raise InfeasibleError(f"edge {e}: mu={value} must be nonnegative")

    probe = DiscretizationParams(dt=0.0, steps=0, lam=lam, mu=mu, d_max={}, margin=margin)
    cycle_violations = check_cycles(model, probe)
    if cycle_violations:
        raise InfeasibleError("; ".join(cycle_violations))

    T = model.horizon
    tau = model.tau
    sup_dts = {a.id: dt_bound(model, probe, a.id) for a in model.agents}
    sup_dt = min(sup_dts.values())

    if steps is not None:
        if steps < 1:
            raise ModelError(f"steps must be a positive integer, got {steps}")
        dt = T / steps
        for i, bound in sorted(sup_dts.items()):
            if dt >= bound:
                raise InfeasibleError(
                    f"agent {i}: requested dt={dt} is not strictly below its bound {bound}"
                )
        if dt >= tau:
            raise InfeasibleError(f"requested dt={dt} must be strictly below tau={tau}")
    else:
        target = tau / 2 if math.isinf(sup_dt) else min(sup_dt, tau) * min(margin, _AUTO_HEADROOM)
        steps = max(2, math.ceil(T / target))
        while T / steps >= target and steps <= steps_cap:
            steps += 1
        if steps > steps_cap:
            raise InfeasibleError(f"no admissible step count at or below {steps_cap}")
        dt = T / steps

    d_max = {}
    for agent in model.agents:
        d_max[agent.id] = margin * dmax_bound(model, probe, agent.id, dt)

    # propagate the per-edge diameter couplings to a fixed point
    for _ in range(len(model.agents) ** 2 + 1):
        changed = False
        for (j, i) in model.edges():
            cap = mu[(j, i)] * d_max[i]
            if d_max[j] > cap:
                d_max[j] = cap
                changed = True
        if not changed:
            break
    else:
        raise InfeasibleError("diameter propagation did not reach a fixed point")
    for i, value in sorted(d_max.items()):
        if value <= 0:
            raise InfeasibleError(f"agent {i}: propagated d_max collapsed to {value}")

    params = DiscretizationParams(
        dt=dt, steps=steps, lam=lam, mu=mu, d_max=d_max, margin=margin
    )
    violations = check_params(model, params, tau)
    if violations:
        raise InfeasibleError("; ".join(violations))
    return params
