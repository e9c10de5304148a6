"""Minimum-energy cuts and persistence pyramids in hierarchies of partitions."""

__version__ = "0.1.0"

from .energy import (Composition, EnergyModel, PREFER_COARSER, PREFER_FINER,
                     ScaleFamily, Side, TiePolicy, check_cross_h_increasing,
                     check_h_increasing, check_scale_increasing,
                     combine_inf, combine_linear, combine_sup,
                     compare_with_tie, evaluate)
from .hierarchy import (Cut, CutLimitExceeded, Hierarchy, concat, count_cuts,
                        enumerate_cuts, horizontal_cut, load_hierarchy,
                        make_cut, refinement_le, restrict, save_hierarchy,
                        ultrametric_distance, validate)
from .optimize import (Choice, OptResult, PersistenceTable, Pyramid,
                       check_top_down, cut_at_scale, minimum_cut,
                       minimum_cut_oracle, persistence, pyramid, saliency)

__all__ = [name for name in dir() if not name.startswith("_")]
