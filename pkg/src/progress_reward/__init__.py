"""Progress-estimating reward models: data synthesis, labeling, training, serving and evaluation."""

__version__ = "0.1.0"
