"""Episode analysis toolkit for detector streams.

Robust low-rank/sparse decomposition, group-fused change-point
segmentation, windowed optical-flow box grouping, and a rule-based fusion
engine that corrects hand-side labels and exports self-training records.
"""

__version__ = "0.1.0"
