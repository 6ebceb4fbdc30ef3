"""Trial lists, score files and evaluation reports."""
import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import DataError, ProtocolError

LABELS = ("target", "nontarget")
REPORT_SCHEMA_VERSION = 1


@dataclass
class TrialList:
    """``(enroll_id, test_id, is_target)`` records."""

    enroll: list
    test: list
    target: np.ndarray

    def __post_init__(self):
        self.enroll = [str(e) for e in self.enroll]
        self.test = [str(t) for t in self.test]
        self.target = np.asarray(self.target, dtype=bool)
        if not len(self.enroll) == len(self.test) == len(self.target):
            raise ProtocolError("trial fields differ in length")
        if len(set(zip(self.enroll, self.test))) != len(self.enroll):
            raise ProtocolError("duplicate (enroll, test) trial")
        if not self.target.any() or self.target.all():
            raise ProtocolError("a trial list needs both target and non-target trials")

    def __len__(self):
        return len(self.enroll)


@dataclass
class ScoreRecord:
    enroll: str
    test: str
    raw_score: float
    label: bool = None
    calibrated_llr: float = None

    def __post_init__(self):
        if not math.isfinite(self.raw_score):
            raise DataError(f"non-finite score for trial {self.enroll}/{self.test}")


def write_trials(trials, path):
    with open(path, "w") as fh:
        for e, t, y in zip(trials.enroll, trials.test, trials.target):
            fh.write(f"{e}\t{t}\t{LABELS[0] if y else LABELS[1]}\n")


def read_trials(path):
    enroll, test, target = [], [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in LABELS:
                raise DataError(f"{path}:{ln}: expected enroll<TAB>test<TAB>target|nontarget")
            enroll.append(parts[0])
            test.append(parts[1])
            target.append(parts[2] == LABELS[0])
    return TrialList(enroll, test, target)


def write_scores(enroll, test, scores, path):
    with open(path, "w") as fh:
        for e, t, s in zip(enroll, test, scores):
            if not math.isfinite(s):
                raise DataError(f"non-finite score for trial {e}/{t}")
            fh.write(f"{e}\t{t}\t{s:.6f}\n")


def read_scores(path):
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected enroll<TAB>test<TAB>score")
            try:
                value = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{ln}: score is not a number") from None
            if (parts[0], parts[1]) in out:
                raise DataError(f"{path}:{ln}: duplicate trial")
            out[(parts[0], parts[1])] = ScoreRecord(parts[0], parts[1], value).raw_score
    return out


def align_scores(trials, score_map):
    """Scores in trial order; every trial must be scored."""
    try:
        return np.array([score_map[(e, t)] for e, t in zip(trials.enroll, trials.test)])
    except KeyError as exc:
        raise DataError(f"trial {exc.args[0]} has no score") from None


def write_det_csv(det, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "p_fa", "p_miss"])
        for thr, pm, pf in det.points():
            w.writerow([repr(float(thr)), repr(float(pf)), repr(float(pm))])


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
