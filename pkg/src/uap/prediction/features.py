"""History features in an agent-centric frame.

The frame has its origin at the agent's last observed position and its x-axis
along the last observed heading. For a history of length ``h`` the feature
vector is

    [dx_1, dy_1, ..., dx_{h-1}, dy_{h-1},  v_1 .. v_h,  dpsi_1 .. dpsi_{h-1}]

where (dx_j, dy_j) is the j-th (oldest first) earlier position relative to the
last one and dpsi_j its heading relative to the last heading.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..geometry import wrap_angle
from ..scenario import AgentState


def feature_size(h: int) -> int:
    return 4 * h - 3


def feature_names(h: int) -> list[str]:
    names = []
    for j in range(h - 1):
        names += [f"dx{j}", f"dy{j}"]
    names += [f"v{j}" for j in range(h)]
    names += [f"dpsi{j}" for j in range(h - 1)]
    return names


def feature_groups(h: int) -> tuple[slice, slice, slice]:
    """Slices of the displacement, speed and heading-change blocks."""
    return slice(0, 2 * h - 2), slice(2 * h - 2, 3 * h - 2), slice(3 * h - 2, 4 * h - 3)


def pad_history(history: Sequence[AgentState], h: int) -> list[AgentState]:
    """Last ``h`` states, front-padded by repeating the earliest one."""
    if len(history) == 0:
        raise ValueError("empty history")
    hist = list(history)[-h:]
    return [hist[0]] * (h - len(hist)) + hist


def history_array(history: Sequence[AgentState], h: int) -> np.ndarray:
    """(h, 4) array of x, y, v, heading after padding."""
    return np.array([[s.x, s.y, s.v, s.heading] for s in pad_history(history, h)])


def local_frame(arr: np.ndarray) -> tuple[np.ndarray, float]:
    """Origin and heading of the agent-centric frame for an (..., h, 4) history."""
    return arr[..., -1, :2], arr[..., -1, 3]


def to_local(points: np.ndarray, origin: np.ndarray, heading) -> np.ndarray:
    """Express global points (..., n, 2) in frames given by origin (..., 2) and heading (...)."""
    c = np.cos(heading)[..., None]
    s = np.sin(heading)[..., None]
    d = points - origin[..., None, :]
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def to_global(points: np.ndarray, origin: np.ndarray, heading) -> np.ndarray:
    c = np.cos(heading)[..., None]
    s = np.sin(heading)[..., None]
    x = c * points[..., 0] - s * points[..., 1]
    y = s * points[..., 0] + c * points[..., 1]
    return np.stack([x, y], axis=-1) + origin[..., None, :]


def features_from_array(arr: np.ndarray) -> np.ndarray:
    """Features for a batch of padded histories of shape (..., h, 4)."""
    origin, psi = local_frame(arr)
    rel = to_local(arr[..., :-1, :2], origin, psi)
    disp = rel.reshape(*rel.shape[:-2], -1)
    speeds = arr[..., :, 2]
    dpsi = wrap_angle(arr[..., :-1, 3] - psi[..., None])
    dpsi = np.asarray(dpsi, dtype=float).reshape(speeds.shape[:-1] + (-1,))
    return np.concatenate([disp, speeds, dpsi], axis=-1)


def features(history: Sequence[AgentState], h: int = 8) -> np.ndarray:
    return features_from_array(history_array(history, h))
