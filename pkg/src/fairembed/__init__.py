"""fairembed: a workbench for subgroup fairness analysis of metric
embeddings — losses, mining, adversarial de-correlation training, and
balanced-vs-imbalanced gap studies on synthetic or precomputed data."""

__version__ = "0.1.0"
