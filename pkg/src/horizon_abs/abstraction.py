"""Deterministic per-agent transition systems with on-demand Post sets.

A configuration is the tuple (own cell, neighbor cells...) in the
agent's declared neighbor order.  Its Post set is computed by solving
the reference trajectory from the configuration's reference points and
collecting every cell met by the endpoint ball of radius
lambda * dt * v_max.  Actions are identified with their successor cell:
under a well-posed discretization each (configuration, successor) pair
is realizable by exactly one parameter class, so the transition system
is deterministic by construction.

Post sets are memoized per configuration and never enumerated eagerly;
planning only ever touches reachable configurations.
"""

import itertools
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import controller, grid, integrate, reach
from .errors import InfeasibleError, ModelError

ENDPOINT_BALL_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Action:
    agent_id: int
    config: tuple
    target: tuple
    point: np.ndarray
    w: np.ndarray


def _thread_count():
    raw = os.environ.get("HORIZON_ABS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class Abstraction:
    def __init__(
        self,
        model,
        params,
        families,
        decs,
        substeps=integrate.DEFAULT_SUBSTEPS,
        integ_tol=integrate.DEFAULT_INTEG_TOL,
    ):
        self.model = model
        self.params = params
        self.families = families
        self.decs = decs
        self.substeps = substeps
        self.integ_tol = integ_tol
        self._post_cache = {}
        self._endpoint_cache = {}
        self._lock = threading.Lock()
        self._threads = _thread_count()

    def radius(self, agent_id):
        agent = self.model.agent(agent_id)
        return controller.r_i(self.params.lam[agent_id], self.params.dt, agent.v_max)

    def config_refs(self, agent_id, config):
        agent = self.model.agent(agent_id)
        if len(config) != 1 + len(agent.neighbors):
            raise ModelError(
                f"agent {agent_id}: configuration needs {1 + len(agent.neighbors)} cells, "
                f"got {len(config)}"
            )
        own = grid.reference_point(self.decs[agent_id], config[0])
        blocks = [
            grid.reference_point(self.decs[j], cell)
            for j, cell in zip(agent.neighbors, config[1:])
        ]
        nbr = np.concatenate(blocks) if blocks else np.zeros(0)
        return own, nbr

    def is_initiating(self, agent_id, config):
        agent = self.model.agent(agent_id)
        if config[0] not in self.decs[agent_id].initiating_set:
            return False
        return all(
            cell in self.decs[j].initiating_set
            for j, cell in zip(agent.neighbors, config[1:])
        )

    def _require_initiating(self, agent_id, config):
        if not self.is_initiating(agent_id, config):
            raise ModelError(
                f"agent {agent_id}: configuration {config} is not transition-initiating"
            )

    def endpoint(self, agent_id, config):
        key = (agent_id, config)
        cached = self._endpoint_cache.get(key)
        if cached is None:
            self.post_many(agent_id, [config])
            cached = self._endpoint_cache[key]
        return cached

    def post(self, agent_id, config):
        key = (agent_id, config)
        cached = self._post_cache.get(key)
        if cached is None:
            cached = self.post_many(agent_id, [config])[0]
        return cached

    def post_many(self, agent_id, configs):
        """Memoized Post sets for many configurations, integrated in one batch."""
        agent = self.model.agent(agent_id)
        dec = self.decs[agent_id]
        missing = []
        for config in configs:
            if (agent_id, config) not in self._post_cache:
                self._require_initiating(agent_id, config)
                missing.append(config)
        missing = sorted(set(missing))
        if missing:
            own = np.empty((len(missing), agent.dim))
            nbr = np.empty((len(missing), len(agent.neighbors) * agent.dim))
            for row, config in enumerate(missing):
                own[row], nbr[row] = self.config_refs(agent_id, config)
            endpoints = controller.reference_endpoints(
                agent, own, nbr, self.params.dt, self.substeps
            )
            radius = self.radius(agent_id)
            center_gap = np.sqrt(
                np.sum((endpoints - dec.region.center) ** 2, axis=-1)
            )
            bad = center_gap + radius > dec.region.radius + ENDPOINT_BALL_SLACK
            if np.any(bad):
                config = missing[int(np.argmax(bad))]
                raise InfeasibleError(
                    f"agent {agent_id}: endpoint ball of configuration {config} leaves "
                    "the reachable region; declared bounds and discretization disagree"
                )

            def intersect(endpoint):
                return tuple(
                    grid.cells_intersecting_ball(dec, reach.Ball(endpoint, radius))
                )

            if self._threads > 1 and len(missing) > 8:
                with ThreadPoolExecutor(max_workers=self._threads) as pool:
                    results = list(pool.map(intersect, endpoints))
            else:
                results = [intersect(
                    endpoints[row]) for row in range(len(missing))]
            with self._lock:
                for config, endpoint, cells in zip(missing, endpoints, results):
                    if not cells:
                        raise InfeasibleError(
                            f"agent {agent_id}: empty Post for configuration {config} "
                            "contradicts well-posedness"
                        )
                    self._endpoint_cache[(agent_id, config)] = endpoint
                    self._post_cache[(agent_id, config)] = cells
        return [self._post_cache[(agent_id, config)] for config in configs]

    def reference_for(self, agent_id, config):
        """Dense, audited reference trajectory (recomputed on every call)."""
        agent = self.model.agent(agent_id)
        own, nbr = self.config_refs(agent_id, config)
        return controller.integrate_reference(
            agent, own, nbr, self.params.dt, self.substeps, self.integ_tol, config=config
        )

    def successor_action(self, agent_id, config, target):
        successors = self.post(agent_id, config)
        if target not in successors:
            raise ModelError(
                f"agent {agent_id}: {target} is not a successor of configuration {config}"
            )
        agent = self.model.agent(agent_id)
        dec = self.decs[agent_id]
        endpoint = self.endpoint(agent_id, config)
        radius = self.radius(agent_id)
        ball = reach.Ball(endpoint, radius)
        point = grid.witness_in_cell_ball(dec, target, ball)
        if point is None:
            raise ModelError(
                f"agent {agent_id}: no representative point in cell {target} for "
                f"configuration {config}"
            )
        point = grid.deepen_point(dec, target, ball, point)
        w = controller.select_w(
            endpoint, point, self.params.lam[agent_id], self.params.dt, agent.v_max
        )
        return Action(agent_id=agent_id, config=config, target=target, point=point, w=w)

    def product_post(self, cells_by_agent):
        """Lazy synchronized successors of a full cell assignment."""
        ids = self.model.agent_ids
        posts = []
        for i in ids:
            config = grid.pr(self.model, cells_by_agent, i)
            posts.append(self.post(i, config))
        for combo in itertools.product(*posts):
            yield dict(zip(ids, combo))

    def enumerate_paths(self, start, m, visitor):
        """Depth-bounded product traversal; the visitor sees complete paths only.

        Branches reaching a non-initiating cell before step m are
        abandoned, mirroring the dead-end treatment in planning.
        """
        ids = self.model.agent_ids

        def rec(assignment, path):
            if len(path) == m + 1:
                visitor(list(path))
                return
            if any(
                assignment[i] not in self.decs[i].initiating_set for i in ids
            ):
                return
            for nxt in self.product_post(assignment):
                path.append(nxt)
                rec(nxt, path)
                path.pop()

        rec(start, [start])

    def summary(self):
        per_agent = {}
        for i in self.model.agent_ids:
            dec = self.decs[i]
            posts = [
                len(cells)
                for (aid, _), cells in self._post_cache.items()
                if aid == i
            ]
            per_agent[i] = {
                "cells": len(dec.index_set),
                "initiating": len(dec.initiating_set),
                "configurations": len(posts),
                "mean_post": (sum(posts) / len(posts)) if posts else 0.0,
            }
        return per_agent


def build_abstraction(model, params, substeps=integrate.DEFAULT_SUBSTEPS,
                      integ_tol=integrate.DEFAULT_INTEG_TOL):
    from . import model as model_mod

    families = {a.id: model_mod.reach_family(model, a.id) for a in model.agents}
    decs = {
        a.id: grid.build_decomposition(families[a.id], params.d_max[a.id], params.dt)
        for a in model.agents
    }
    return Abstraction(model, params, families, decs, substeps=substeps, integ_tol=integ_tol)
