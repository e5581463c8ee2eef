"""
Graph definition for the full lab pipeline.

This file wires together:
- synth (dataset generation)
- cluster (BIC model selection + confusion metrics)
- experiment (agent calibration, simulated experiment, ANOVA battery)
- loop (adaptive recommender)
- report
"""

from typing import Any, Optional

from langgraph.graph import END, START, StateGraph

from stages import cluster_node, experiment_node, loop_node, report_node, synth_node
from state import LabState

STAGE_ORDER = ["synth", "cluster", "experiment", "loop", "report"]


# ---------------------------------------------------------------------------
# Routing logic
# ---------------------------------------------------------------------------

def _route_to(next_stage: str):
    def route(state: LabState) -> str:
        """Stop at the first failed stage."""
        if state.get("error_state"):
            return "end"
        return next_stage

    return route


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def create_graph():
    """
    Build and return the LangGraph state machine for the pipeline.
    """
    graph_builder = StateGraph(LabState)

    graph_builder.add_node("synth", synth_node)
    graph_builder.add_node("cluster", cluster_node)
    graph_builder.add_node("experiment", experiment_node)
    graph_builder.add_node("loop", loop_node)
    graph_builder.add_node("report", report_node)

    graph_builder.add_edge(START, "synth")
    for current, following in zip(STAGE_ORDER, STAGE_ORDER[1:]):
        graph_builder.add_conditional_edges(
            current,
            _route_to(following),
            {following: following, "end": END},
        )
    graph_builder.add_edge("report", END)

    return graph_builder.compile()


# Cached graph instance for reuse
_graph_instance: Optional[Any] = None


def get_graph():
    """
    Get a singleton instance of the compiled graph.
    """
    global _graph_instance
    if _graph_instance is None:
        _graph_instance = create_graph()
    return _graph_instance
