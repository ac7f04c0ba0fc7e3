"""Attack-graph hardening: kernelization, exact attacker DP and defender search."""

__version__ = "0.1.0"

from .graph import AttackGraph, EdgeAttr, GraphFormatError, TriviallySafeError, load_graph, parse_graph, prune_irrelevant
from .kernel import CondensedGraph, build_condensed
from .mdp import AttackerMDP, AttackerState, attacker_mdp
from .dp import StateLimitExceeded, dp_solver, solve
from .defender import BlockingPlan, EdoConfig, edo_run, exhaustive_defender, greedy_defender, value_ec_defender
from .montecarlo import simulate
