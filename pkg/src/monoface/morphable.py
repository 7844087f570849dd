"""Bilinear face model: tensor construction, reduction, and evaluation.

A dataset of topology-consistent meshes is stacked into a third-order
tensor of shape (3*N_v, N_id, N_exp), with each vertex array flattened
row-major as [x0, y0, z0, x1, ...]. The identity mode is truncated by SVD
reduction; the expression mode is orthogonalized at full rank so the
variety of expressions is preserved.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SingularConfigurationError
from .mesh import FaceMesh, FaceTopology

SIGMA_FLOOR = 1e-12


@dataclass
class DataTensor:
    """Vertex data of a full dataset: (3*N_v, N_id, N_exp)."""

    data: np.ndarray
    n_id: int
    n_exp: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1:] != (self.n_id, self.n_exp):
            raise DimensionError(
                f"tensor shape {self.data.shape} does not match "
                f"(3*N_v, {self.n_id}, {self.n_exp})"
            )
        if self.n_id < 2 or self.n_exp < 2:
            raise DimensionError("need at least 2 identities and 2 expressions")
        if self.data.shape[0] % 3 != 0:
            raise DimensionError("first tensor mode must be 3*N_v")

    @classmethod
    def from_meshes(cls, meshes: list, n_id: int, n_exp: int) -> "DataTensor":
        """Stack a row-major [identity][expression] list of FaceMesh."""
        if len(meshes) != n_id * n_exp:
            raise DimensionError(f"expected {n_id * n_exp} meshes, got {len(meshes)}")
        nv = meshes[0].topology.vertex_count
        data = np.empty((3 * nv, n_id, n_exp))
        for i in range(n_id):
            for j in range(n_exp):
                data[:, i, j] = meshes[i * n_exp + j].vertices.ravel()
        return cls(data, n_id, n_exp)

    def face(self, i: int, j: int) -> np.ndarray:
        """Vertex array (N_v, 3) of dataset face (identity i, expression j)."""
        return self.data[:, i, j].reshape(-1, 3)


@dataclass
class BilinearModel:
    """Reduced core tensor plus the singular values of both modes.

    Evaluating the core against per-sample rows of the (truncated) factor
    matrices reproduces dataset faces; ``mean_id_weights`` /
    ``mean_exp_weights`` are the column means of those factor matrices and
    evaluate to the dataset mean face.
    """

    core: np.ndarray
    sigma_id: np.ndarray
    sigma_exp: np.ndarray
    mean_id_weights: np.ndarray
    mean_exp_weights: np.ndarray

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=np.float64)
        self.sigma_id = np.asarray(self.sigma_id, dtype=np.float64)
        self.sigma_exp = np.asarray(self.sigma_exp, dtype=np.float64)
        self.mean_id_weights = np.asarray(self.mean_id_weights, dtype=np.float64)
        self.mean_exp_weights = np.asarray(self.mean_exp_weights, dtype=np.float64)
        if self.core.ndim != 3:
            raise DimensionError("core must be a third-order tensor")
        if self.sigma_id.shape != (self.d_id,) or self.sigma_exp.shape != (self.d_exp,):
            raise DimensionError("singular value lengths must match core dimensions")

    @property
    def d_id(self) -> int:
        return self.core.shape[1]

    @property
    def d_exp(self) -> int:
        return self.core.shape[2]

    @property
    def vertex_count(self) -> int:
        return self.core.shape[0] // 3

    def sigma_id_safe(self) -> np.ndarray:
        return np.maximum(self.sigma_id, SIGMA_FLOOR)

    def sigma_exp_safe(self) -> np.ndarray:
        return np.maximum(self.sigma_exp, SIGMA_FLOOR)


def _sign_normalize_columns(U: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    U = U.copy()
    for col in range(U.shape[1]):
        idx = int(np.argmax(np.abs(U[:, col])))
        if U[idx, col] < 0:
            U[:, col] = -U[:, col]
    return U


def _mode_factor(unfolding: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left singular vectors and singular values of a mode unfolding."""
    U, s, _ = np.linalg.svd(unfolding, full_matrices=False)
    return _sign_normalize_columns(U), s


def build_bilinear_model(data: DataTensor, d_id: int) -> BilinearModel:
    """SVD-reduce the dataset tensor along the identity mode.

    The identity factor is truncated to d_id columns; the expression factor
    is kept at full rank N_exp. The core is the data tensor contracted with
    the transposed factors.
    """
    if d_id > data.n_id:
        raise DimensionError(f"d_id={d_id} exceeds dataset identity count {data.n_id}")
    if d_id < 1:
        raise DimensionError("d_id must be >= 1")

    T = data.data
    # Mode-2 unfolding: rows indexed by identity.
    unfold_id = T.transpose(1, 0, 2).reshape(data.n_id, -1)
    U_id, s_id = _mode_factor(unfold_id)
    # Mode-3 unfolding: rows indexed by expression.
    unfold_exp = T.transpose(2, 0, 1).reshape(data.n_exp, -1)
    U_exp, s_exp = _mode_factor(unfold_exp)

    U_id = U_id[:, :d_id]
    core = np.einsum("aij,ip,jq->apq", T, U_id, U_exp, optimize=True)
    return BilinearModel(
        core=core,
        sigma_id=s_id[:d_id],
        sigma_exp=s_exp,
        mean_id_weights=U_id.mean(axis=0),
        mean_exp_weights=U_exp.mean(axis=0),
    )


def dataset_weights(data: DataTensor, d_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample weight rows (identity and expression factor matrices).

    Row i of the first matrix evaluates dataset identity i; row j of the
    second evaluates expression j. Matches the factors used by
    build_bilinear_model for the same d_id.
    """
    unfold_id = data.data.transpose(1, 0, 2).reshape(data.n_id, -1)
    U_id, _ = _mode_factor(unfold_id)
    unfold_exp = data.data.transpose(2, 0, 1).reshape(data.n_exp, -1)
    U_exp, _ = _mode_factor(unfold_exp)
    return U_id[:, :d_id], U_exp


def evaluate_face(
    model: BilinearModel,
    w_id: np.ndarray,
    w_exp: np.ndarray,
    topology: FaceTopology = None,
) -> np.ndarray:
    """Contract the core with identity and expression weights.

    Returns the (N_v, 3) vertex array; wrap in a FaceMesh by passing the
    dataset topology.
    """
    w_id = np.asarray(w_id, dtype=np.float64).ravel()
    w_exp = np.asarray(w_exp, dtype=np.float64).ravel()
    if w_id.shape != (model.d_id,):
        raise DimensionError(f"w_id has length {w_id.size}, model expects {model.d_id}")
    if w_exp.shape != (model.d_exp,):
        raise DimensionError(f"w_exp has length {w_exp.size}, model expects {model.d_exp}")
    flat = (model.core @ w_exp) @ w_id
    verts = flat.reshape(-1, 3)
    if topology is not None:
        return FaceMesh(topology, verts)
    return verts


def evaluate_mean_face(model: BilinearModel, topology: FaceTopology = None):
    return evaluate_face(model, model.mean_id_weights, model.mean_exp_weights, topology)


def _rigid_fit(source: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity transform (scale, rotation, translation) minimizing
    ||s R x + t - y||^2 over corresponding points."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    ys = target - mu_t
    var_s = float((xs * xs).sum())
    if var_s < 1e-30:
        raise SingularConfigurationError("source points are coincident")
    cov = xs.T @ ys
    U, sv, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    scale = float((sv * np.diag(D)).sum()) / var_s
    t = mu_t - scale * (R @ mu_s)
    return scale, R, t


def procrustes_align(meshes: list) -> list:
    """Rigidly align every mesh (rotation+translation+uniform scale) to the
    first, minimizing summed squared vertex distance."""
    if len(meshes) < 2:
        raise DimensionError("need at least 2 meshes to align")
    ref = meshes[0]
    out = [ref]
    for mesh in meshes[1:]:
        if mesh.topology.vertex_count != ref.topology.vertex_count:
            raise DimensionError("meshes must share topology")
        s, R, t = _rigid_fit(mesh.vertices, ref.vertices)
        out.append(mesh.with_vertices(s * (mesh.vertices @ R.T) + t))
    return out
