"""Pixel-triangle correspondence, spherical-harmonics Lambertian shading,
and alternating lighting/albedo estimation.

Gray images are (height, width) float64 arrays with intensities in [0, 1].
Pixel (i, j) means row i (y, downward), column j (x, rightward); pixel
centers sit at (x, y) = (j + 0.5, i + 0.5).

Shading normals live in the image frame (row-step, column-step, depth):
the first component is the derivative direction along rows, matching the
height-field parametrization of the fine stage. Camera-facing normals have
a negative third component.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .coarse_fit import Camera, camera_depths, project
from .errors import DimensionError, InputError, SingularConfigurationError, SolverError
from .mesh import FaceMesh
from .numerics import solve_linear_ls

logger = logging.getLogger(__name__)

DEFAULT_MU_ALBEDO = 5.0
LIGHTING_ROUNDS = 3


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B, scaled to [0, 1]."""
    arr = np.asarray(rgb)
    if arr.ndim == 2:
        gray = arr.astype(np.float64)
    elif arr.ndim == 3 and arr.shape[2] in (3, 4):
        rgb_f = arr[..., :3].astype(np.float64)
        gray = rgb_f @ np.array([0.299, 0.587, 0.114])
    else:
        raise InputError(f"expected (H, W[, 3]) image, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        gray = gray / np.iinfo(arr.dtype).max
    return np.clip(gray, 0.0, 1.0)


@dataclass
class AlbedoModel:
    """PCA surface reflectance over mesh vertices."""

    mean: np.ndarray
    components: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.components = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        self.sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        if self.components.shape[1] != self.mean.size:
            raise DimensionError("albedo components must match vertex count")
        if self.sigma.shape != (self.components.shape[0],):
            raise DimensionError("need one standard deviation per component")
        if np.any(self.sigma <= 0):
            raise DimensionError("albedo standard deviations must be positive")

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def vertex_albedo(self, w_r: np.ndarray) -> np.ndarray:
        w_r = np.asarray(w_r, dtype=np.float64).ravel()
        if w_r.shape != (self.n_components,):
            raise DimensionError(
                f"albedo weights have length {w_r.size}, expected {self.n_components}"
            )
        return self.mean + self.components.T @ w_r


@dataclass
class PixelTriangleMap:
    """Front-most triangle and barycentric coordinates per covered pixel.

    ``triangle_index`` is -1 outside the face region; ``triangles`` is the
    (T, 3) vertex-index array the map was rasterized from. Flat per-pixel
    arrays across the package follow ``pixels()`` order (row-major scan of
    the mask).
    """

    triangle_index: np.ndarray
    bary: np.ndarray
    mask: np.ndarray
    triangles: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of covered pixels, row-major."""
        return np.nonzero(self.mask)

    def pixel_triangles(self) -> np.ndarray:
        return self.triangle_index[self.mask]

    def pixel_bary(self) -> np.ndarray:
        return self.bary[self.mask]


def rasterize_zbuffer(mesh: FaceMesh, camera: Camera, width: int, height: int) -> PixelTriangleMap:
    """Z-buffer rasterization of front-facing triangles at pixel centers.

    Depth is the camera-space z of the interpolated surface point; smaller
    is nearer. Ties on shared edges or equal depth go to the lowest
    triangle index.
    """
    verts = mesh.vertices
    tris = mesh.topology.triangles
    proj = project(camera, verts)
    depth = camera_depths(camera, verts)

    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)

    for t in range(len(tris)):
        ia, ib, ic = tris[t]
        pa, pb, pc = proj[ia], proj[ib], proj[ic]
        area2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if area2 >= 0:  # back-facing or degenerate in projection
            continue
        xs = (pa[0], pb[0], pc[0])
        ys = (pa[1], pb[1], pc[1])
        j0 = max(int(np.ceil(min(xs) - 0.5)), 0)
        j1 = min(int(np.floor(max(xs) - 0.5)), width - 1)
        i0 = max(int(np.ceil(min(ys) - 0.5)), 0)
        i1 = min(int(np.floor(max(ys) - 0.5)), height - 1)
        if j1 < j0 or i1 < i0:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        px = jj + 0.5
        py = ii + 0.5
        la = ((pc[0] - pb[0]) * (py - pb[1]) - (pc[1] - pb[1]) * (px - pb[0])) / area2
        lb = ((pa[0] - pc[0]) * (py - pc[1]) - (pa[1] - pc[1]) * (px - pc[0])) / area2
        lc = 1.0 - la - lb
        inside = (la >= 0) & (lb >= 0) & (lc >= 0)
        if not inside.any():
            continue
        z = la * depth[ia] + lb * depth[ib] + lc * depth[ic]
        win = inside & (z < zbuf[i0 : i1 + 1, j0 : j1 + 1])
        sub = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        zbuf[sub][win] = z[win]
        tri_id[sub][win] = t
        bary[sub + (0,)][win] = la[win]
        bary[sub + (1,)][win] = lb[win]
        bary[sub + (2,)][win] = lc[win]

    return PixelTriangleMap(tri_id, bary, tri_id >= 0, tris.copy())


def sh_basis(n: np.ndarray) -> np.ndarray:
    """Second-order spherical-harmonics monomials of a unit vector:
    [1, nx, ny, nz, nx*ny, nx*nz, ny*nz, nx^2 - ny^2, 3 nz^2 - 1]."""
    n = np.asarray(n, dtype=np.float64).ravel()
    if n.shape != (3,):
        raise DimensionError("sh_basis expects a 3-vector")
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-6:
        logger.warning("sh_basis input has norm %.6g; normalizing", norm)
        if norm == 0:
            raise InputError("cannot normalize a zero vector")
        n = n / norm
    return sh_basis_field(n[None, :])[0]


def sh_basis_field(normals: np.ndarray) -> np.ndarray:
    """Vectorized SH basis for an (N, 3) array of unit normals."""
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    return np.stack(
        [np.ones_like(nx), nx, ny, nz, nx * ny, nx * nz, ny * nz,
         nx * nx - ny * ny, 3.0 * nz * nz - 1.0],
        axis=1,
    )


def triangle_normals(vertices: np.ndarray, triangles: np.ndarray, which: np.ndarray = None) -> np.ndarray:
    """Unit normals of (selected) triangles by normalized cross product."""
    tris = triangles if which is None else triangles[which]
    a = vertices[tris[:, 0]]
    b = vertices[tris[:, 1]]
    c = vertices[tris[:, 2]]
    n = np.cross(b - a, c - a)
    lens = np.linalg.norm(n, axis=1)
    bad = np.nonzero(lens < 1e-14)[0]
    if bad.size:
        which_ids = (np.arange(len(triangles)) if which is None else np.asarray(which))[bad]
        raise SingularConfigurationError(f"zero-area triangles: {which_ids.tolist()}")
    return n / lens[:, None]


def mesh_normals(mesh: FaceMesh, pixmap: PixelTriangleMap) -> np.ndarray:
    """Per-pixel face normals in mesh coordinates, pixels() order."""
    return triangle_normals(mesh.vertices, pixmap.triangles, pixmap.pixel_triangles())


def shading_normals(mesh: FaceMesh, camera: Camera, pixmap: PixelTriangleMap) -> np.ndarray:
    """Per-pixel normals rotated to camera space and expressed in the image
    frame (row-step, column-step, depth)."""
    rotated = mesh.vertices @ camera.R.T
    n = triangle_normals(rotated, pixmap.triangles, pixmap.pixel_triangles())
    return n[:, [1, 0, 2]]


def interpolate_vertex_field(pixmap: PixelTriangleMap, field: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of per-vertex values to covered pixels.

    ``field`` is (N_v,) or (N_v, K); the result follows pixels() order.
    """
    tri_verts = pixmap.triangles[pixmap.pixel_triangles()]  # (P, 3)
    bary = pixmap.pixel_bary()  # (P, 3)
    vals = field[tri_verts]  # (P, 3[, K])
    if vals.ndim == 2:
        return (vals * bary).sum(axis=1)
    return (vals * bary[:, :, None]).sum(axis=1)


def shade_pixels(
    pixmap: PixelTriangleMap,
    normals: np.ndarray,
    albedo_model: AlbedoModel,
    w_r: np.ndarray,
    xi: np.ndarray,
) -> np.ndarray:
    """Per-pixel shading r * max(xi . H(n), 0) in pixels() order."""
    xi = np.asarray(xi, dtype=np.float64).ravel()
    if xi.shape != (9,):
        raise DimensionError("expected 9 spherical-harmonics coefficients")
    r = interpolate_vertex_field(pixmap, albedo_model.vertex_albedo(w_r))
    light = sh_basis_field(normals) @ xi
    return r * np.maximum(light, 0.0)


def shade(
    pixmap: PixelTriangleMap,
    normals: np.ndarray,
    albedo_model: AlbedoModel,
    w_r: np.ndarray,
    xi: np.ndarray,
) -> np.ndarray:
    """Shaded image over the face region (zero elsewhere)."""
    out = np.zeros(pixmap.shape)
    out[pixmap.mask] = shade_pixels(pixmap, normals, albedo_model, w_r, xi)
    return out


def lighting_objective(
    image_pixels: np.ndarray,
    r_pixels: np.ndarray,
    light: np.ndarray,
    w_r: np.ndarray,
    sigma: np.ndarray,
    mu_albedo1: float,
) -> float:
    resid = r_pixels * np.maximum(light, 0.0) - image_pixels
    reg = mu_albedo1 * float(((w_r / sigma) ** 2).sum())
    return float(resid @ resid) + reg


def estimate_lighting_albedo(
    image: np.ndarray,
    pixmap: PixelTriangleMap,
    normals: np.ndarray,
    albedo_model: AlbedoModel,
    mu_albedo1: float = DEFAULT_MU_ALBEDO,
    rounds: int = LIGHTING_ROUNDS,
) -> tuple[np.ndarray, np.ndarray, list]:
    """Alternating linear solves for SH lighting and PCA albedo weights.

    Starts from zero albedo weights, solves lighting first, and iterates
    ``rounds`` times. Pixels whose lighting term is non-positive under the
    current estimate are excluded from that half-step (the clamp
    contributes zero derivative there). Returns (xi, w_r, objective trace
    after each half-step).
    """
    if pixmap.count < 9:
        raise InputError(f"face region has {pixmap.count} pixels; need at least 9")
    I = image[pixmap.mask]
    H = sh_basis_field(normals)
    mean_pix = interpolate_vertex_field(pixmap, albedo_model.mean)
    comp_pix = interpolate_vertex_field(pixmap, albedo_model.components.T)  # (P, N_r)
    sigma = albedo_model.sigma

    w_r = np.zeros(albedo_model.n_components)
    xi = None
    trace = []
    for _ in range(rounds):
        r_pix = mean_pix + comp_pix @ w_r
        active = np.ones(len(I), dtype=bool) if xi is None else (H @ xi) > 0
        if not active.any():
            raise SolverError("all pixels clamped; cannot estimate lighting")
        A = r_pix[active, None] * H[active]
        if np.linalg.matrix_rank(A) < 9:
            raise SolverError(
                "spherical-harmonics system is rank-deficient "
                "(insufficient normal variation over the face region)"
            )
        xi = solve_linear_ls_dense(A, I[active])
        trace.append(lighting_objective(I, r_pix, H @ xi, w_r, sigma, mu_albedo1))

        light = H @ xi
        active = light > 0
        if active.any() and albedo_model.n_components > 0:
            A = light[active, None] * comp_pix[active]
            b = I[active] - light[active] * mean_pix[active]
            ridge = mu_albedo1 / sigma**2
            w_r = solve_linear_ls_dense(A, b, ridge=ridge)
        r_pix = mean_pix + comp_pix @ w_r
        trace.append(lighting_objective(I, r_pix, light, w_r, sigma, mu_albedo1))
    return xi, w_r, trace


def solve_linear_ls_dense(A, b, ridge=None):
    from .numerics import solve_linear_ls

    return solve_linear_ls(A, b, ridge=ridge)


def render_shading(
    mesh: FaceMesh,
    camera: Camera,
    albedo_model: AlbedoModel,
    w_r: np.ndarray,
    xi: np.ndarray,
    width: int,
    height: int,
) -> tuple[np.ndarray, PixelTriangleMap]:
    """Rasterize and shade a mesh; returns the image and the pixel map."""
    pixmap = rasterize_zbuffer(mesh, camera, width, height)
    if pixmap.count == 0:
        return np.zeros((height, width)), pixmap
    normals = shading_normals(mesh, camera, pixmap)
    return shade(pixmap, normals, albedo_model, w_r, xi), pixmap
