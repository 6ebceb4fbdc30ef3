"""Frame-level feature normalisation."""
import numpy as np

from .network import FrameSequence


def sliding_cmn(seq, window=300):
    """Subtract the mean of a centred, edge-truncated window from every frame.

    ``window`` is in frames (300 frames = 3 s at a 10 ms shift). Accepts a
    :class:`FrameSequence` or a ``(T, D)`` array and returns the same kind.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=float)
    t = frames.shape[0]
    left = (window - 1) // 2
    right = window - 1 - left
    # offsetting by the first frame keeps constant input exactly zero
    shifted = frames - frames[:1]
    csum = np.vstack([np.zeros((1, frames.shape[1])), np.cumsum(shifted, axis=0)])
    idx = np.arange(t)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, t - 1) + 1
    means = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    out = shifted - means
    if isinstance(seq, FrameSequence):
        return FrameSequence(out, seq.utterance_id, seq.speaker_id, seq.domain_id)
    return out
