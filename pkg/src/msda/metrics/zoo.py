"""Per-speaker zoo categories from mean target and non-target scores."""
import math
import warnings
from dataclasses import dataclass

import numpy as np

CATEGORIES = ("dove", "worm", "chameleon", "phantom", "none")


@dataclass
class ZooAssignment:
    speaker: str
    mean_target: float
    mean_nontarget: float
    target_quartile: str
    nontarget_quartile: str
    category: str


def _extremes(values, keys):
    """Nearest-rank quartiles of size ceil(n/4); ties broken by speaker id."""
    n = len(values)
    q = math.ceil(n / 4)
    order = sorted(range(n), key=lambda i: (values[i], keys[i]))
    bottom = set(order[:q])
    top = set(order[n - q:])
    return top, bottom


def _quartile(i, top, bottom):
    if i in top and i in bottom:
        return "both"
    if i in top:
        return "top"
    if i in bottom:
        return "bottom"
    return "middle"


def zoo_stats(speakers, scores, labels):
    """Zoo assignment per enrolled speaker.

    ``speakers[k]`` is the enrolled speaker of trial ``k``. Speakers lacking
    a target or a non-target trial are excluded with a warning.
    """
    speakers = np.asarray([str(s) for s in speakers])
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    ids, tmeans, nmeans = [], [], []
    skipped = []
    for spk in sorted(set(speakers.tolist())):
        mask = speakers == spk
        t, n = scores[mask & labels], scores[mask & ~labels]
        if len(t) == 0 or len(n) == 0:
            skipped.append(spk)
            continue
        ids.append(spk)
        tmeans.append(float(t.mean()))
        nmeans.append(float(n.mean()))
    if skipped:
        warnings.warn(f"zoo: excluded {len(skipped)} speaker(s) missing a trial class",
                      RuntimeWarning)
    if not ids:
        return []
    t_top, t_bot = _extremes(tmeans, ids)
    n_top, n_bot = _extremes(nmeans, ids)
    out = []
    for i, spk in enumerate(ids):
        if i in t_top and i in n_bot:
            cat = "dove"
        elif i in t_bot and i in n_top:
            cat = "worm"
        elif i in t_top and i in n_top:
            cat = "chameleon"
        elif i in t_bot and i in n_bot:
            cat = "phantom"
        else:
            cat = "none"
        out.append(ZooAssignment(spk, tmeans[i], nmeans[i], _quartile(i, t_top, t_bot),
                                 _quartile(i, n_top, n_bot), cat))
    return out
