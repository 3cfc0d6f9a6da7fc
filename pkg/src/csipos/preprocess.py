"""Complex CSI matrices to real 3-channel training tensors.

A complex N_B x N_C channel matrix becomes a real 3 x N_B x N_C tensor:
channel 0 is the entrywise magnitude, channels 1 and 2 are sin/cos of the
column-wise phase difference between vertically adjacent antennas (the last
row wraps against the first). Magnitude and phase differences are both
invariant to a global phase, so the tensor is too.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def phase_differences(csi: np.ndarray) -> np.ndarray:
    """Per-entry phase difference arg(h[n, k]) - arg(h[n+1 mod N_B, k]).

    Computed as the principal argument of h[n] * conj(h[n+1]), which equals
    the direct difference modulo 2*pi without branch-cut artifacts; the
    sin/cos consumers are insensitive to the 2*pi ambiguity. arg(0) is 0 by
    convention, so zero entries contribute a zero difference.
    """
    csi = np.asarray(csi)
    if csi.ndim != 2:
        raise ValueError(f"expected an N_B x N_C matrix, got shape {csi.shape}")
    rolled = np.roll(csi, -1, axis=0)
    return np.angle(csi * np.conj(rolled))


def to_tensor(csi: np.ndarray) -> np.ndarray:
    """Stack [|h|, sin(delta), cos(delta)] into a 3 x N_B x N_C float tensor."""
    delta = phase_differences(csi)
    return np.stack([np.abs(csi), np.sin(delta), np.cos(delta)]).astype(np.float64)


def stack_snapshot(csi_list: Sequence[np.ndarray]) -> np.ndarray:
    """Stack one snapshot's per-vehicle tensors into V x 3 x N_B x N_C.

    Order is preserved; shapes must agree.
    """
    if len(csi_list) == 0:
        raise ValueError("cannot stack an empty CSI list")
    tensors = [to_tensor(h) for h in csi_list]
    shape = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.shape != shape:
            raise ValueError(f"CSI matrix {i} has shape {t.shape[1:]}, expected {shape[1:]}")
    return np.stack(tensors)


def magnitude_scale(csi_list: Sequence[np.ndarray], percentile: float = 99.0) -> float:
    """Dataset-level magnitude normalizer: the given percentile of |h|.

    Computed once on the pretraining split and applied identically to every
    split (raw mmWave magnitudes are tiny). Returns 1.0 for empty input or
    an all-zero dataset.
    """
    mags = [np.abs(np.asarray(h)).ravel() for h in csi_list]
    if not mags:
        return 1.0
    scale = float(np.percentile(np.concatenate(mags), percentile))
    return scale if scale > 0.0 else 1.0


def apply_magnitude_scale(tensor: np.ndarray, scale: float) -> np.ndarray:
    """Divide channel 0 by the dataset scale, leaving phase channels alone."""
    out = tensor.copy()
    out[..., 0, :, :] /= scale
    return out
