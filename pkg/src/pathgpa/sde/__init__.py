"""Neural SDEs on pathway trajectories: fitting, stability and bifurcation."""
from .bifurcation import (CONDITIONS, BifurcationReport, Thresholds, detect_bifurcation, detect_graph_bifurcation,
                          negative_edge_flag, potential_profile)
from .model import (FunctionSde, NodeTrajectorySet, SdeConfig, SdeModel, SdeTrainingError, extract_node_trajectories,
                    fit_graph_sde, fit_sde, principal_directions, simulate_paths, transition_nll)
from .stability import (StabilityReport, classify_stability, diffusion_changes, dirichlet_energy,
                        graph_pathway_stability, node_dirichlet, pathway_stability, stability_report)

__all__ = [
    "CONDITIONS", "BifurcationReport", "Thresholds", "detect_bifurcation", "detect_graph_bifurcation",
    "negative_edge_flag", "potential_profile", "FunctionSde", "NodeTrajectorySet", "SdeConfig", "SdeModel",
    "SdeTrainingError", "extract_node_trajectories", "fit_graph_sde", "fit_sde", "principal_directions",
    "simulate_paths", "transition_nll", "StabilityReport", "classify_stability", "diffusion_changes",
    "dirichlet_energy", "graph_pathway_stability", "node_dirichlet", "pathway_stability", "stability_report",
]
