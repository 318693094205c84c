"""Graph classification via center-rooted spanning trees projected to images.

Pipeline: ``load_dataset`` parses TU-style files into graphs; ``center_tree``
builds a BFS spanning tree from a minimum-eccentricity root; ``project`` lays
the tree out as a fixed-size image whose rows are tree layers; the ``nn``
module classifies those images with a from-scratch 2D recurrent network; and
``run_cv`` drives stratified cross-validation with seeded tree/projection
shuffling as data augmentation.
"""

from .data import (
    DatasetFormatError,
    DatasetProfile,
    Graph,
    GraphImage,
    ImageCacheError,
    build_profile,
    connected_components,
    largest_component_subgraph,
    load_dataset,
    read_image_cache,
    write_dataset,
    write_image_cache,
)
from .experiment import (
    ExperimentConfig,
    augment_dataset,
    config_hash,
    run_cv,
    save_report,
    stratified_folds,
    strip_timing,
)
from .nn import (
    Model,
    adam_init,
    adam_step,
    build_model,
    forward,
    forward_batch,
    grad_check,
    load_model,
    loss_and_backward,
    loss_and_backward_batch,
    parameter_count,
    save_model,
)
from .projection import (
    ImageSizeError,
    project,
    required_width,
    verify_topology,
    write_ppm,
)
from .trees import (
    GraphConnectivityError,
    Tree,
    bfs_tree,
    center_tree,
    descendant_counts,
    select_root,
    shortest_path_matrix,
)

__version__ = "0.1.0"
