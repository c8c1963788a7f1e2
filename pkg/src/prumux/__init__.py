"""Multiplexed, structurally pruned transformer encoders and the (N, s) planner."""
from importlib import resources

from .core import Rng, seeded_gaussian
from .mux import MuxKit, demultiplex, make_kit, multiplex, retrieval_loss
from .encoder import EncoderModel, classify, encode, forward, init_model
from .pruner import SparsitySpec, MaskScores, align_demux, apply_masks, compact, sparsity_of, threshold_masks
from .distiller import DistillMapping, LossWeights, build_mapping, combined_loss, layer_loss
from .toytrain import TrainConfig, gen_task, grad_check, train_phase1, train_prune_distill, train_task
from .bench import BenchRun, BenchResult, flop_count, measure
from .planner import (AccuracyModel, MeasurementRecord, PlannerQuery, ThroughputModel, budget_sweep, eval_accuracy,
                      eval_throughput, eval_throughput_model, fit_accuracy, fit_throughput, loocv_accuracy,
                      predict_topk, zeta)
from .io import ModelBundle, load_bundle, load_measurements, save_bundle, save_measurements

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a fixture shipped in ``prumux/data``."""
    return resources.files(__name__) / "data" / name
