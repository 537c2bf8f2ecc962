from .automaton import Fsa, FsaFormatError, Transition, annotate_time, build_per_path_fsa
from .combine import EmptyTrainingSet, combine_fsas
from .components import ComponentList, identify_components
from .pruning import Branch, Loop, PNode, PrunedTree, prune_loops_concurrency
from .training import LinkedTrace, Model, link_trace, train_model

__all__ = [
    "Branch", "ComponentList", "EmptyTrainingSet", "Fsa", "FsaFormatError", "LinkedTrace",
    "Loop", "Model", "PNode", "PrunedTree", "Transition", "annotate_time",
    "build_per_path_fsa", "combine_fsas", "identify_components", "link_trace",
    "prune_loops_concurrency", "train_model",
]
