"""Verification metrics: DET/EER, Cllr, PAV, calibration and zoo statistics."""
from .calibration import CalibrationModel, CalibrationWarning, fit_linear_calibration
from .cllr import PavWarp, compute_cllr, fit_pav, pav_cllr_min
from .det import DetCurve, compute_det, compute_eer, eer_from_det
from .io import (ScoreRecord, TrialList, align_scores, read_scores, read_trials, write_det_csv,
                 write_scores, write_trials)
from .zoo import ZooAssignment, zoo_stats

__all__ = [
    "CalibrationModel", "CalibrationWarning", "DetCurve", "PavWarp", "ScoreRecord", "TrialList",
    "ZooAssignment", "align_scores", "compute_cllr", "compute_det", "compute_eer",
    "eer_from_det", "fit_linear_calibration", "fit_pav", "pav_cllr_min", "read_scores",
    "read_trials", "write_det_csv", "write_scores", "write_trials", "zoo_stats",
]
