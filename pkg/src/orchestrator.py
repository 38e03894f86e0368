"""
Solver Orchestration

Runs the half-iteration loop of the ADMM variants as a LangGraph state machine:

    r_admm / mr_admm:  odd -> dual -> even -> (odd | END)
    conventional:      iterate -> (iterate | END)

1. odd  - every node solves its local subproblem from the previous snapshot
2. dual - every node updates its dual from the new odd primals and caches
          the neighbor differences
3. even - every node takes the recycled closed-form step from its caches

Each graph node is a barrier: all per-node updates of a half-iteration run
(optionally on a thread pool) against the same snapshot, and results are
collected in node order before the next phase starts. The trace grows through
an append-only `records` channel.
"""
import logging
import operator
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Annotated, List, Literal, TypedDict

from langgraph.graph import END, StateGraph
from langsmith import traceable

from .errors import DimensionMismatch, ScheduleViolation
from .privacy import private_conventional_step, private_even_update, private_odd_update
from .settings import load_settings
from .solvers import (
    IterationRecord,
    IterationTrace,
    conventional_step,
    dual_update,
    even_update,
    init_states,
    map_nodes,
    odd_update,
    stack_dual,
    stack_primal,
)

logger = logging.getLogger(__name__)


class SolverState(TypedDict, total=False):
    """
    State passed between graph nodes.

    Attributes:
        states: NodeState list of the latest completed half-iteration
        pair: Current pair index k (1-based)
        t: Index of the last completed iteration
        records: Append-only list of IterationRecord
        mark: (wall clock, data accesses, noise streams) at the start of an odd phase
    """
    states: List
    pair: int
    t: int
    records: Annotated[List, operator.add]
    mark: tuple


class _PhaseMeter:
    """Measures wall time, objective accesses and noise streams per phase"""

    def __init__(self, objectives, noise_source):
        self.objectives = objectives
        self.noise_source = noise_source
        self.instrumented = all(hasattr(obj, "access_count") for obj in objectives)

    def accesses(self):
        if not self.instrumented:
            return None
        return sum(obj.access_count for obj in self.objectives)

    def streams(self):
        return 0 if self.noise_source is None else self.noise_source.streams_opened

    def mark(self):
        return (time.perf_counter(), self.accesses(), self.streams())

    def record(self, mark, t, phase, states):
        started, accesses, streams = mark
        now_accesses = self.accesses()
        return IterationRecord(
            t=t,
            phase=phase,
            primal=stack_primal(states),
            dual=stack_dual(states),
            wall_time=time.perf_counter() - started,
            data_accesses=None if accesses is None else now_accesses - accesses,
            noise_draws=self.streams() - streams,
        )


class OddPhase:
    """Local subproblem solve on every node (perturbed when a noise source is set)"""

    def __init__(self, topology, objectives, cfg, executor, meter, noise_source=None):
        self.topology = topology
        self.objectives = objectives
        self.cfg = cfg
        self.executor = executor
        self.meter = meter
        self.noise_source = noise_source

    def __call__(self, state: SolverState) -> SolverState:
        mark = self.meter.mark()
        k = state["pair"]
        n = self.topology.n_nodes
        etas = self.cfg.schedule.values(k, n)
        states = state["states"]

        def update(i):
            if self.noise_source is None:
                return odd_update(i, states, self.topology, etas[i], self.objectives[i], self.cfg)
            return private_odd_update(
                i, states, self.topology, etas[i], self.objectives[i],
                alpha_ik=self.noise_source.alpha(i, k),
                rng=self.noise_source.rng(i, k),
                cfg=self.cfg,
                noise=self.noise_source.injected(i, k, self.objectives[i].dimension),
            )

        return {"states": map_nodes(self.executor, update, n), "mark": mark}


class DualPhase:
    """Dual ascent on every node; closes the odd iteration"""

    def __init__(self, topology, cfg, executor, meter):
        self.topology = topology
        self.cfg = cfg
        self.executor = executor
        self.meter = meter

    def __call__(self, state: SolverState) -> SolverState:
        k = state["pair"]
        etas = self.cfg.schedule.values(k, self.topology.n_nodes)
        states = state["states"]
        updated = map_nodes(
            self.executor,
            lambda i: dual_update(i, states, self.topology, etas[i]),
            self.topology.n_nodes,
        )
        t = 2 * k - 1
        return {
            "states": updated,
            "t": t,
            "records": [self.meter.record(state["mark"], t, "odd", updated)],
        }


class EvenPhase:
    """Recycled step from cached gradient and neighbor differences"""

    def __init__(self, topology, cfg, executor, meter, private=False, verbose=False):
        self.topology = topology
        self.cfg = cfg
        self.executor = executor
        self.meter = meter
        self.step = private_even_update if private else even_update
        self.verbose = verbose

    def __call__(self, state: SolverState) -> SolverState:
        mark = self.meter.mark()
        k = state["pair"]
        etas = self.cfg.schedule.values(k, self.topology.n_nodes)
        states = state["states"]
        updated = map_nodes(
            self.executor,
            lambda i: self.step(i, states[i], self.topology, etas[i], self.cfg.gamma),
            self.topology.n_nodes,
        )
        t = 2 * k
        if self.verbose and (k == 1 or k % 50 == 0 or k == self.cfg.outer_pairs):
            print(f"   ✓ pair {k}/{self.cfg.outer_pairs} (t={t})")
        return {
            "states": updated,
            "t": t,
            "pair": k + 1,
            "records": [self.meter.record(mark, t, "even", updated)],
        }


class ConventionalPhase:
    """One full conventional iteration (local solve then dual update)"""

    def __init__(self, topology, objectives, cfg, executor, meter, noise_source=None, verbose=False):
        self.topology = topology
        self.objectives = objectives
        self.cfg = cfg
        self.executor = executor
        self.meter = meter
        self.noise_source = noise_source
        self.verbose = verbose

    def __call__(self, state: SolverState) -> SolverState:
        mark = self.meter.mark()
        t = state["t"] + 1
        etas = self.cfg.schedule.values(1, self.topology.n_nodes)
        if self.noise_source is None:
            updated = conventional_step(
                state["states"], self.topology, etas, self.objectives, self.cfg, executor=self.executor
            )
        else:
            updated = private_conventional_step(
                state["states"], self.topology, etas, self.objectives, self.cfg,
                self.noise_source, t, executor=self.executor,
            )
        if self.verbose and (t == 1 or t % 100 == 0 or t == 2 * self.cfg.outer_pairs):
            print(f"   ✓ iteration {t}/{2 * self.cfg.outer_pairs}")
        return {
            "states": updated,
            "t": t,
            "records": [self.meter.record(mark, t, "conventional", updated)],
        }


def should_continue_recycled(state: SolverState, outer_pairs: int) -> Literal["odd", "end"]:
    """Loop back to the odd phase until K pairs are done"""
    return "odd" if state["pair"] <= outer_pairs else "end"


def should_continue_conventional(state: SolverState, outer_pairs: int) -> Literal["iterate", "end"]:
    """Conventional runs 2K iterations so traces line up with the recycled variants"""
    return "iterate" if state["t"] < 2 * outer_pairs else "end"


def create_solver_graph(topology, objectives, cfg, executor=None, noise_source=None, verbose=False):
    """
    Build the LangGraph state machine for one solver run.

    Args:
        topology: Topology
        objectives: One Objective per node
        cfg: SolverConfig
        executor: Optional thread pool for per-node updates
        noise_source: Optional NoiseSource (private runs)
        verbose: Print progress lines

    Returns a compiled graph
    """
    meter = _PhaseMeter(objectives, noise_source)
    workflow = StateGraph(SolverState)
    K = cfg.outer_pairs

    if cfg.variant == "conventional":
        workflow.add_node(
            "iterate",
            ConventionalPhase(topology, objectives, cfg, executor, meter, noise_source, verbose),
        )
        workflow.set_entry_point("iterate")
        workflow.add_conditional_edges(
            "iterate",
            lambda s: should_continue_conventional(s, K),
            {"iterate": "iterate", "end": END},
        )
    else:
        workflow.add_node("odd", OddPhase(topology, objectives, cfg, executor, meter, noise_source))
        workflow.add_node("dual", DualPhase(topology, cfg, executor, meter))
        workflow.add_node(
            "even",
            EvenPhase(topology, cfg, executor, meter, private=noise_source is not None, verbose=verbose),
        )
        workflow.set_entry_point("odd")
        workflow.add_edge("odd", "dual")
        workflow.add_edge("dual", "even")
        workflow.add_conditional_edges(
            "even",
            lambda s: should_continue_recycled(s, K),
            {"odd": "odd", "end": END},
        )

    return workflow.compile()


def _validate_run(topology, objectives, cfg):
    if len(objectives) != topology.n_nodes:
        raise DimensionMismatch(f"{len(objectives)} objectives for {topology.n_nodes} nodes")
    dims = {obj.dimension for obj in objectives}
    if len(dims) != 1:
        raise DimensionMismatch(f"objectives disagree on dimension: {sorted(dims)}")
    if cfg.variant in ("conventional", "r_admm") and not cfg.schedule.is_constant:
        raise ScheduleViolation(f"{cfg.variant} needs a constant penalty schedule")
    cfg.schedule.validate(cfg.outer_pairs, topology.n_nodes)
    return dims.pop()


@traceable(name="run_solver", tags=["admm"])
def run_solver(topology, objectives, cfg, initial_states=None, noise_source=None, verbose=False):
    """
    Run one solver variant for K pairs (2K iterations).

    Args:
        topology: Topology
        objectives: One Objective per node (instrumented wrappers allowed)
        cfg: SolverConfig
        initial_states: Optional NodeState list; defaults to the seeded draw
        noise_source: NoiseSource for private runs (see privacy.run_private)
        verbose: Print progress lines

    Returns:
        IterationTrace with the t = 0 state followed by 2K records
    """
    dimension = _validate_run(topology, objectives, cfg)
    states = initial_states or init_states(topology.n_nodes, dimension, cfg.seed)
    workers = cfg.workers or load_settings().workers

    initial = IterationRecord(t=0, phase="init", primal=stack_primal(states), dual=stack_dual(states))
    K = cfg.outer_pairs
    steps_per_pair = 2 if cfg.variant == "conventional" else 3

    if verbose:
        print(f"\n⚙️  {cfg.variant} on {topology.n_nodes} nodes, K={K}, workers={workers}")

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        graph = create_solver_graph(topology, objectives, cfg, executor, noise_source, verbose)
        final = graph.invoke(
            {"states": states, "pair": 1, "t": 0, "records": []},
            config={"recursion_limit": steps_per_pair * K + 10},
        )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    trace = IterationTrace(variant=cfg.variant, records=[initial] + list(final["records"]))
    logger.info("%s finished: %d iterations", cfg.variant, len(trace) - 1)
    return trace
