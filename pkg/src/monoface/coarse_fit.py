"""Coarse face fitting: camera, identity, and expression parameters from 68
2D landmarks by coordinate descent, with silhouette landmark re-binding.

Image coordinates are pixels with origin at the top-left corner, x
rightward, y downward. The camera is weak-perspective: uniform scale after
rotation, z dropped.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SingularConfigurationError
from .mesh import NUM_LANDMARKS, FaceTopology
from .morphable import BilinearModel, evaluate_face
from .numerics import solve_linear_ls


@dataclass
class Camera:
    """Weak perspective: u = alpha * (R p)[:2] + t."""

    alpha: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        if self.R.shape != (3, 3) or self.t.shape != (2,):
            raise DimensionError("camera needs a 3x3 rotation and a 2D translation")
        if self.alpha <= 0:
            raise DimensionError("camera scale must be positive")
        if np.linalg.norm(self.R.T @ self.R - np.eye(3)) > 1e-6 or np.linalg.det(self.R) < 0:
            raise DimensionError("R must be a proper rotation")


@dataclass
class Landmarks2D:
    """68 detected image landmarks with per-point silhouette flags."""

    points: np.ndarray
    is_silhouette: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.is_silhouette = np.asarray(self.is_silhouette, dtype=bool)
        if self.points.shape != (NUM_LANDMARKS, 2):
            raise DimensionError(f"expected ({NUM_LANDMARKS}, 2) landmark array")
        if self.is_silhouette.shape != (NUM_LANDMARKS,):
            raise DimensionError("silhouette flags must have length 68")
        if not np.all(np.isfinite(self.points)):
            raise DimensionError("landmark coordinates must be finite")

    def scaled(self, factor: float) -> "Landmarks2D":
        """Landmarks resampled with the image (pixel-center mapping)."""
        pts = (self.points + 0.5) * factor - 0.5
        return Landmarks2D(pts, self.is_silhouette.copy())


@dataclass
class FitConfig:
    mu_fit1: float = 1.5e3
    mu_fit2: float = 1.5e3
    outer_iterations: int = 4
    early_exit_rel: float = 1e-6

    def __post_init__(self):
        if self.mu_fit1 < 0 or self.mu_fit2 < 0:
            raise DimensionError("regularization weights must be nonnegative")
        if self.outer_iterations < 1:
            raise DimensionError("need at least one outer iteration")


@dataclass
class CoarseFitResult:
    w_id: np.ndarray
    w_exp: np.ndarray
    camera: Camera
    vertices: np.ndarray
    bindings: np.ndarray
    energy_trace: list = field(default_factory=list)


def project(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Weak-perspective projection of one point (3,) or a stack (N, 3)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    rotated = np.atleast_2d(pts) @ camera.R.T
    out = camera.alpha * rotated[:, :2] + camera.t
    return out[0] if single else out


def camera_depths(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Camera-space depth (third rotated coordinate); smaller is nearer."""
    return np.atleast_2d(np.asarray(points, dtype=np.float64)) @ camera.R[2]


def solve_camera(points3: np.ndarray, points2: np.ndarray) -> Camera:
    """Weak-perspective recovery from >= 4 non-coplanar correspondences.

    Solves the unconstrained affine system by least squares, projects the
    2x3 linear part to the nearest scaled row-orthonormal pair, and
    completes the rotation by cross product (det +1).
    """
    X = np.asarray(points3, dtype=np.float64)
    U = np.asarray(points2, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 3 or U.shape != (X.shape[0], 2):
        raise DimensionError("expected (N, 3) and (N, 2) correspondence arrays")
    if X.shape[0] < 4:
        raise SingularConfigurationError("need at least 4 correspondences")

    x_mean = X.mean(axis=0)
    u_mean = U.mean(axis=0)
    Xc = X - x_mean
    Uc = U - u_mean
    sv_x = np.linalg.svd(Xc, compute_uv=False)
    if sv_x[2] <= 1e-9 * max(sv_x[0], 1e-30):
        raise SingularConfigurationError("3D landmarks are coplanar or degenerate")

    M = np.linalg.lstsq(Xc, Uc, rcond=None)[0].T  # (2, 3) affine projection
    Um, sm, Vmt = np.linalg.svd(M, full_matrices=False)
    if sm[1] <= 1e-12 * max(sm[0], 1e-30):
        raise SingularConfigurationError("projected landmarks are degenerate")
    alpha = float(sm.mean())
    R2 = Um @ Vmt
    R = np.vstack([R2, np.cross(R2[0], R2[1])])
    t = u_mean - alpha * (R2 @ x_mean)
    return Camera(alpha, R, t)


def _landmark_blocks(model: BilinearModel, w_fixed: np.ndarray, mode: str) -> np.ndarray:
    """Per-vertex (N_v, 3, d) linear maps from free weights to positions."""
    if mode == "id":
        G = model.core @ w_fixed  # (3*N_v, d_id)
    else:
        G = np.einsum("aij,i->aj", model.core, w_fixed)  # (3*N_v, d_exp)
    return G.reshape(model.vertex_count, 3, -1)


def fit_energy(
    model: BilinearModel,
    w_id: np.ndarray,
    w_exp: np.ndarray,
    camera: Camera,
    bindings: np.ndarray,
    landmarks: Landmarks2D,
    config: FitConfig,
) -> float:
    """Landmark reprojection energy plus weight regularizers."""
    verts = evaluate_face(model, w_id, w_exp)
    resid = project(camera, verts[bindings]) - landmarks.points
    e = float((resid * resid).sum())
    e += config.mu_fit1 * float(((w_id / model.sigma_id_safe()) ** 2).sum())
    e += config.mu_fit2 * float(((w_exp / model.sigma_exp_safe()) ** 2).sum())
    return e


def _solve_weights(
    model: BilinearModel,
    camera: Camera,
    w_fixed: np.ndarray,
    landmarks: Landmarks2D,
    bindings: np.ndarray,
    mu: float,
    sigma: np.ndarray,
    mode: str,
) -> np.ndarray:
    blocks = _landmark_blocks(model, w_fixed, mode)[bindings]  # (68, 3, d)
    P = camera.alpha * camera.R[:2]  # (2, 3)
    A = np.einsum("rc,kcd->krd", P, blocks).reshape(2 * len(bindings), -1)
    b = (landmarks.points - camera.t).ravel()
    ridge = mu / np.maximum(sigma, 1e-12) ** 2
    return solve_linear_ls(A, b, ridge=ridge)


def solve_identity(
    model: BilinearModel,
    camera: Camera,
    w_exp: np.ndarray,
    landmarks: Landmarks2D,
    bindings: np.ndarray,
    config: FitConfig,
) -> np.ndarray:
    """Exact minimizer of the fitting energy over identity weights."""
    return _solve_weights(
        model, camera, np.asarray(w_exp, dtype=np.float64), landmarks, bindings,
        config.mu_fit1, model.sigma_id, "id",
    )


def solve_expression(
    model: BilinearModel,
    camera: Camera,
    w_id: np.ndarray,
    landmarks: Landmarks2D,
    bindings: np.ndarray,
    config: FitConfig,
) -> np.ndarray:
    """Exact minimizer of the fitting energy over expression weights."""
    return _solve_weights(
        model, camera, np.asarray(w_id, dtype=np.float64), landmarks, bindings,
        config.mu_fit2, model.sigma_exp, "exp",
    )


def silhouette_line_vertices(
    topology: FaceTopology, vertices: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Per-line occluding-contour vertex under rotation R.

    Selects, on each horizontal line, the vertex whose approximate rotated
    normal R v / ||R v|| is most orthogonal to the view direction
    Z = (0, 0, 1); ties break to the lowest vertex index.
    """
    rz = np.asarray(R, dtype=np.float64)[2]
    winners = np.empty(len(topology.silhouette_lines), dtype=np.int64)
    for li, line in enumerate(topology.silhouette_lines):
        vs = vertices[line]
        norms = np.linalg.norm(vs, axis=1)
        norms[norms == 0] = 1.0
        vals = np.abs(vs @ rz) / norms
        best = vals.min()
        winners[li] = line[vals == best].min()
    return winners


def update_silhouette_landmarks(
    topology: FaceTopology,
    vertices: np.ndarray,
    camera: Camera,
    landmarks: Landmarks2D,
    bindings: np.ndarray,
) -> np.ndarray:
    """Re-bind each 2D silhouette landmark to the nearest projected
    occluding-contour vertex; internal bindings are left unchanged."""
    new_bindings = np.asarray(bindings, dtype=np.int64).copy()
    sil_idx = np.nonzero(landmarks.is_silhouette)[0]
    if sil_idx.size == 0:
        return new_bindings
    winners = silhouette_line_vertices(topology, vertices, camera.R)
    proj = project(camera, vertices[winners])
    for k in sil_idx:
        d2 = ((proj - landmarks.points[k]) ** 2).sum(axis=1)
        best = d2.min()
        new_bindings[k] = winners[d2 == best].min()
    return new_bindings


def fit_coarse(
    model: BilinearModel,
    topology: FaceTopology,
    landmarks: Landmarks2D,
    config: FitConfig = None,
) -> CoarseFitResult:
    """Coordinate descent over camera, silhouette bindings, identity, and
    expression weights, starting from the dataset mean face."""
    if config is None:
        config = FitConfig()
    if int(landmarks.is_silhouette.sum()) != int(topology.landmark_is_silhouette.sum()):
        raise DimensionError(
            "silhouette landmark count does not match the topology partition"
        )
    bindings = topology.landmark_vertices.copy()
    w_id = model.mean_id_weights.copy()
    w_exp = model.mean_exp_weights.copy()
    camera = None
    trace = []
    prev_sweep = None

    for _ in range(config.outer_iterations):
        verts = evaluate_face(model, w_id, w_exp)
        camera = solve_camera(verts[bindings], landmarks.points)
        trace.append(("camera", fit_energy(model, w_id, w_exp, camera, bindings, landmarks, config)))
        bindings = update_silhouette_landmarks(topology, verts, camera, landmarks, bindings)
        trace.append(("silhouette", fit_energy(model, w_id, w_exp, camera, bindings, landmarks, config)))
        w_id = solve_identity(model, camera, w_exp, landmarks, bindings, config)
        trace.append(("identity", fit_energy(model, w_id, w_exp, camera, bindings, landmarks, config)))
        w_exp = solve_expression(model, camera, w_id, landmarks, bindings, config)
        sweep = fit_energy(model, w_id, w_exp, camera, bindings, landmarks, config)
        trace.append(("expression", sweep))
        if prev_sweep is not None and prev_sweep - sweep < config.early_exit_rel * max(prev_sweep, 1e-300):
            break
        prev_sweep = sweep

    verts = evaluate_face(model, w_id, w_exp)
    return CoarseFitResult(w_id, w_exp, camera, verts, bindings, trace)
