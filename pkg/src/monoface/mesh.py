"""Fixed-connectivity triangle mesh with landmark and region annotations.

Coordinate conventions used throughout the package:
  * mesh/model space: x rightward, y downward, z away from the camera
    (the camera looks along +z, so camera-facing surfaces have normals
    with negative z);
  * synthetic datasets define 1 model unit = 1 mm.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, TopologyError

NUM_LANDMARKS = 68


@dataclass
class FaceTopology:
    """Connectivity and annotations shared by every mesh of a dataset.

    ``landmark_vertices`` are the 68 labeled vertices in standard markup
    order; ``landmark_is_silhouette`` flags the pose-dependent subset
    (jawline). ``silhouette_lines`` are ordered vertex chains covering the
    potential occluding contour, scanned during pose fitting.
    """

    vertex_count: int
    triangles: np.ndarray
    landmark_vertices: np.ndarray
    landmark_is_silhouette: np.ndarray
    silhouette_lines: list
    region_masks: list
    nose_tip_vertex: int

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.landmark_vertices = np.asarray(self.landmark_vertices, dtype=np.int64)
        self.landmark_is_silhouette = np.asarray(self.landmark_is_silhouette, dtype=bool)
        self.silhouette_lines = [np.asarray(l, dtype=np.int64) for l in self.silhouette_lines]
        self.region_masks = [np.asarray(m, dtype=bool) for m in self.region_masks]
        self.validate()

    def validate(self):
        n = self.vertex_count
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise TopologyError(f"triangles must be (T, 3), got {self.triangles.shape}")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= n:
            raise TopologyError("triangle vertex index out of range")
        if self.landmark_vertices.shape != (NUM_LANDMARKS,):
            raise TopologyError(
                f"expected {NUM_LANDMARKS} landmark vertices, got {self.landmark_vertices.shape}"
            )
        if self.landmark_is_silhouette.shape != (NUM_LANDMARKS,):
            raise TopologyError("landmark silhouette flags must have length 68")
        if np.any(self.landmark_vertices < 0) or np.any(self.landmark_vertices >= n):
            raise TopologyError("landmark vertex index out of range")
        edges = self.edge_set()
        for line in self.silhouette_lines:
            if line.size == 0:
                raise TopologyError("empty silhouette line")
            if np.any(line < 0) or np.any(line >= n):
                raise TopologyError("silhouette line vertex out of range")
            if np.unique(line).size != line.size:
                raise TopologyError("silhouette line revisits a vertex")
            for a, b in zip(line[:-1], line[1:]):
                if (min(a, b), max(a, b)) not in edges:
                    raise TopologyError(f"silhouette line jumps over non-edge ({a},{b})")
        for i, mask in enumerate(self.region_masks):
            if mask.shape != (n,):
                raise TopologyError(f"region mask {i} has shape {mask.shape}, expected ({n},)")
            if not mask.any():
                raise TopologyError(f"region mask {i} is empty")
        if not 0 <= self.nose_tip_vertex < n:
            raise TopologyError("nose tip vertex out of range")

    def edge_set(self) -> set:
        tri = self.triangles
        edges = set()
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for u, v in zip(tri[:, a], tri[:, b]):
                edges.add((min(int(u), int(v)), max(int(u), int(v))))
        return edges

    def adjacency_pairs(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array, sorted for determinism."""
        tri = self.triangles
        pairs = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


@dataclass
class FaceMesh:
    """A concrete embedding of a FaceTopology: one 3D position per vertex."""

    topology: FaceTopology
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (self.topology.vertex_count, 3):
            raise DimensionError(
                f"vertices shape {self.vertices.shape} does not match "
                f"topology vertex count {self.topology.vertex_count}"
            )
        if not np.all(np.isfinite(self.vertices)):
            raise DimensionError("mesh vertices must be finite")

    def with_vertices(self, vertices: np.ndarray) -> "FaceMesh":
        return FaceMesh(self.topology, vertices)
