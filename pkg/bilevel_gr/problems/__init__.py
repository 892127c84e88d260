# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Built-in bilevel problem families."""
from .datasets import dump_dataset, load_dataset
from .gan import GAN_LOSSES, GANProblemSpec, gan_oracle
from .hyperclean import HyperCleanProblem, HyperCleanSpec, hyperclean_oracle
from .meta import MetaProblem, MetaTask, MetaTaskSpec, generate_meta_tasks, meta_oracle
from .mog import MOG_FAMILIES, MOGSpec, mog_sampler
from .quadratic import quadratic_pair_hypergradient, quadratic_pair_oracle
from .toy import ToyReference, ToySpec, toy_oracle, toy_reference, toy_value

__all__ = [
    "GAN_LOSSES",
    "GANProblemSpec",
    "HyperCleanProblem",
    "HyperCleanSpec",
    "MOG_FAMILIES",
    "MOGSpec",
    "MetaProblem",
    "MetaTask",
    "MetaTaskSpec",
    "ToyReference",
    "ToySpec",
    "dump_dataset",
    "gan_oracle",
    "generate_meta_tasks",
    "hyperclean_oracle",
    "load_dataset",
    "meta_oracle",
    "mog_sampler",
    "quadratic_pair_hypergradient",
    "quadratic_pair_oracle",
    "toy_oracle",
    "toy_reference",
    "toy_value",
]
