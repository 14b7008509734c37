"""Desk-scale laboratory for embedding-matching distillation of neural
retrieval models: toy dual/cross-encoder teachers, distilled students
(symmetric or with an inherited frozen document index), retrieval and
re-ranking metrics, and numerical verification of the finite-sample
generalization-gap inequalities the method is built on.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
