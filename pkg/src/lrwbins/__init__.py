"""Two-stage tabular inference: LR per combined bin, GBDT fallback over RPC."""

from .allocation import Allocation, CoverageCurve, allocate, evaluate_per_bin, select_cutoff, sweep
from .binning import BinSpec, combined_bin_index, fit_bins
from .config_table import (FirstStageTable, export_first_stage, export_second_stage,
                           import_first_stage, import_second_stage)
from .dataset import Dataset, FeatureSchema, fit_normalizer, load_csv, split
from .first_stage import LRParams, LRwBinsModel, build_lrwbins, build_plain_lr, predict_first_stage, train_lr
from .gbdt import GbdtModel, GbdtParams, predict_gbdt, train_gbdt
from .metrics import accuracy, projected_multistage_latency, roc_auc
from .ranking import FeatureRanking, rank_gbdt_gain, rank_mrmr

__version__ = "0.1.0"
