"""Graph clustering by contrastive training against batch modularity matrices.

Pipeline: two-stage random walks build mini-batches and their similarity /
modularity matrices; positive and negative pairs follow the sign of the
modularity entries; a GNN encoder is trained with a temperature-scaled
contrastive loss; embeddings are clustered with k-means and scored with
ACC / NMI / ARI / macro-F1.
"""

from .clustering import (KMeansResult, MetricsReport, PurityReport, accuracy,
                         ari, evaluate_embeddings, kmeans, macro_f1, nmi,
                         pseudo_label_purity)
from .encoder import (EncoderParams, OptimizerState, encoder_backward,
                      encoder_forward, full_graph_embed, gcn_forward,
                      init_optimizer, init_params, load_checkpoint,
                      optimizer_step, sage_forward, save_checkpoint)
from .graph import (CsrGraph, GraphFormatError, InducedSubgraph, from_edges,
                    induce_subgraph, load_edge_list, load_features,
                    load_labels, random_features, write_edge_list)
from .loss import (LossReport, PairSets, derive_pairs, simclr_loss,
                   simple_loss)
from .modularity import (DenseCapError, dense_modularity_matrix,
                         global_modularity, high_order_modularity_matrix)
from .trainer import TrainConfig, TrainResult, TrainTrace, resume, train
from .walks import (Batch, VisitCounts, WalkConfig, WalkStreams,
                    batch_similarity, build_batch, filter_sub_community,
                    random_walk_counts)

__version__ = "0.1.0"

__all__ = [
    "Batch", "CsrGraph", "DenseCapError", "EncoderParams", "GraphFormatError",
    "InducedSubgraph", "KMeansResult", "LossReport", "MetricsReport",
    "OptimizerState", "PairSets", "PurityReport", "TrainConfig", "TrainResult",
    "TrainTrace", "VisitCounts", "WalkConfig", "WalkStreams", "accuracy",
    "ari", "batch_similarity", "build_batch", "dense_modularity_matrix",
    "derive_pairs", "encoder_backward", "encoder_forward",
    "evaluate_embeddings", "filter_sub_community", "from_edges",
    "full_graph_embed", "gcn_forward", "global_modularity",
    "high_order_modularity_matrix", "induce_subgraph", "init_optimizer",
    "init_params", "kmeans", "load_checkpoint", "load_edge_list",
    "load_features", "load_labels", "macro_f1", "nmi", "optimizer_step",
    "pseudo_label_purity", "random_features", "random_walk_counts", "resume",
    "sage_forward", "save_checkpoint", "simclr_loss", "simple_loss", "train",
    "write_edge_list",
]
