"""
Axis-angle rotations and their analytic derivatives
"""
import numpy as np
from scipy.spatial.transform import Rotation

# below this angle the first-order series is used for dR/dw
SMALL_ANGLE = 1e-7


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x"""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=np.float64)).as_matrix()


def rotvec_derivatives(w: np.ndarray, R: np.ndarray = None) -> np.ndarray:
    """
    Partial derivatives of R(w) with respect to each axis-angle component.

    Returns a (3, 3, 3) array whose [a] slice is dR/dw_a, using the closed
    form dR/dw_a = (w_a [w]x + [w x (I - R) e_a]x) R / |w|^2.
    """
    w = np.asarray(w, dtype=np.float64)
    if R is None:
        R = rotvec_to_matrix(w)
    theta_sq = float(w @ w)
    out = np.empty((3, 3, 3))
    eye = np.eye(3)
    if theta_sq < SMALL_ANGLE ** 2:
        wx = skew(w)
        for a in range(3):
            ea = skew(eye[a])
            out[a] = ea + 0.5 * (ea @ wx + wx @ ea)
        return out
    wx = skew(w)
    I_minus_R = eye - R
    for a in range(3):
        out[a] = (w[a] * wx + skew(np.cross(w, I_minus_R[:, a]))) @ R / theta_sq
    return out
