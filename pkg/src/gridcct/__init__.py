"""Detect stealthy false-data-injection attacks from the Markov graph of bus angles."""

from .case_io import GridCase, from_canonical_json, load_case, parse_matpower_case, to_canonical_json
from .cct import CctConfig, MarkovGraph, edit_distance, run_cct, tune_threshold
from .detect import anomaly_scores, detect, estimate_precision, localize, run_decentralized
from .gmrf import (
    PrecisionModel,
    SampleMatrix,
    partial_correlations,
    precision_from_b,
    predicted_markov_graph,
    sample_gmrf,
    walk_summability_alpha,
)
from .grid_model import build_susceptance_matrix, hop_distances, partition_areas, solve_angles
from .stream_cov import CovAccumulator, SlidingCovAccumulator

__version__ = "0.1.0"
