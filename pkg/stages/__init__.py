"""
Pipeline stages. Each module exposes a ``cmd_*`` function used by the CLI and
a ``*_node`` function used by the graph.
"""

from stages.synth_stage import cmd_synth, synth_node
from stages.cluster_stage import cmd_cluster, cluster_node
from stages.experiment_stage import cmd_experiment, experiment_node
from stages.loop_stage import cmd_loop, loop_node
from stages.report_stage import cmd_report, report_node

COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "experiment": cmd_experiment,
    "loop": cmd_loop,
    "report": cmd_report,
}

__all__ = [
    "COMMANDS",
    "cmd_synth",
    "cmd_cluster",
    "cmd_experiment",
    "cmd_loop",
    "cmd_report",
    "synth_node",
    "cluster_node",
    "experiment_node",
    "loop_node",
    "report_node",
]
