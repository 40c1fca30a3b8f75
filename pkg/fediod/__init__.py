"""
FedIOD simulator.

Data-free, one-way federated distillation: a central generator and student
learn from frozen local teachers through input-space and output-space
distillation. Baselines (FedAvg, standalone, centralized), Dirichlet
partitioning, communication accounting and DP sanitization included.
"""

from .version import PACKAGE_VERSION

__version__ = PACKAGE_VERSION
