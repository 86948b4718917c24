"""Graph neural networks with channel-equivariant node noise."""

from .counting import PatternKind, count_pattern, count_pattern_naive
from .graphs import Graph, gen_csl, gen_erdos_renyi, gen_subgraph_task, permute_graph, read_jsonl, write_jsonl
from .kernels import BACKEND
from .model import (DualState, ModelConfig, aggr_forward, init_model, load_checkpoint, model_forward, mp_layer,
                    pool, save_checkpoint, subset_head)
from .noise import channel_perm_distance, covering_ratio_experiment, greedy_cover, sample_noise
from .train import TrainConfig, discrimination_experiment, evaluate, train
from .wl import wl_colors

__version__ = "0.1.0"
