"""Synthetic colored-descriptor datasets with controlled intrinsic dimension.

The generator mimics the geometry this library targets: each "image"
contributes a bundle of descriptors sampled around scene landmarks, images
within a scene view overlapping landmark windows (so their descriptor
clouds overlap), and all descriptors live on a low-dimensional subspace
embedded in the ambient space. Matching descriptors sit at a controlled
fraction of the suggested search radius; descriptors of unrelated
landmarks stay several radii apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluate import Pose


@dataclass
class QueryImage:
    name: str
    source_color: int
    vectors: np.ndarray


@dataclass
class SceneDataset:
    vectors: np.ndarray = field(repr=False)
    colors: np.ndarray = field(repr=False)
    image_names: list[str]
    poses: dict[str, Pose] = field(repr=False)
    basis: np.ndarray = field(repr=False)
    noise: float
    match_radius: float
    d_eff: int
    images_per_scene: int
    scene_landmarks: list[np.ndarray] = field(repr=False)
    windows: list[np.ndarray] = field(repr=False)

    @property
    def n_images(self) -> int:
        return len(self.image_names)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def image_window(self, image: int) -> np.ndarray:
        """Landmark positions (subspace coords) the image observes."""
        scene = image // self.images_per_scene
        return self.scene_landmarks[scene][self.windows[image]]


def _orthonormal_basis(rng: np.random.Generator, dim: int, d_eff: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, d_eff)))
    return q * np.sign(np.diag(r))


def _place_landmarks(
    rng: np.random.Generator, center: np.ndarray, count: int, min_gap: float
) -> np.ndarray:
    """Rejection-sample landmark positions at pairwise distance >= min_gap."""
    d_eff = center.shape[0]
    spread = min_gap * max(count, 2) ** (1.0 / d_eff)
    placed = np.empty((count, d_eff))
    k = 0
    while k < count:
        cand = center + rng.normal(0.0, spread, d_eff)
        if k == 0 or np.linalg.norm(placed[:k] - cand, axis=1).min() >= min_gap:
            placed[k] = cand
            k += 1
    return placed


def _sample_features(
    rng: np.random.Generator, landmarks: np.ndarray, count: int, noise: float
) -> np.ndarray:
    idx = np.arange(count) % len(landmarks)
    return landmarks[idx] + rng.normal(0.0, noise, (count, landmarks.shape[1]))


def make_scene_dataset(
    seed: int,
    n_images: int = 200,
    feats_per_image: int = 200,
    dim: int = 32,
    d_eff: int = 8,
    images_per_scene: int = 10,
    landmarks_per_scene: int = 40,
    visible_fraction: float = 0.5,
    noise: float = 1.0,
    radius_over_match: float = 12.5,
) -> SceneDataset:
    """Clustered database of ``n_images`` descriptor bundles.

    ``radius_over_match`` fixes the suggested search radius as a multiple
    of the typical distance between two observations of the same landmark
    (sigma * sqrt(2 * d_eff)): matches land near radius / radius_over_match
    while distinct landmarks stay several radii apart.
    """
    if d_eff > dim:
        raise ValueError("intrinsic dimension cannot exceed the ambient one")
    rng = np.random.default_rng(seed)
    basis = _orthonormal_basis(rng, dim, d_eff)
    match_dist = noise * math.sqrt(2 * d_eff)
    radius = radius_over_match * match_dist
    visible = max(1, round(landmarks_per_scene * visible_fraction))

    # landmark clouds several radii apart within a scene; scenes far apart
    landmark_gap = 4.0 * radius
    scene_extent = landmark_gap * max(landmarks_per_scene, 2) ** (1.0 / d_eff) * 6.0
    scene_gap = scene_extent + 8.0 * radius

    all_low = np.empty((n_images * feats_per_image, d_eff))
    colors = np.empty(n_images * feats_per_image, dtype=np.uint32)
    names = []
    poses = {}
    windows = []
    scene_landmarks: list[np.ndarray] = []
    w = 0
    for img in range(n_images):
        scene = img // images_per_scene
        local = img % images_per_scene
        if local == 0:
            center = np.zeros(d_eff)
            center[0] = scene * scene_gap
            scene_landmarks.append(
                _place_landmarks(rng, center, landmarks_per_scene, landmark_gap)
            )
        per_scene = min(images_per_scene, n_images - scene * images_per_scene)
        if per_scene == 1 or landmarks_per_scene == visible:
            start = 0
        else:
            start = round(local * (landmarks_per_scene - visible) / (per_scene - 1))
        window = np.arange(start, start + visible)
        windows.append(window)
        all_low[w : w + feats_per_image] = _sample_features(
            rng, scene_landmarks[scene][window], feats_per_image, noise
        )
        colors[w : w + feats_per_image] = img
        w += feats_per_image
        name = f"img{img:05d}"
        names.append(name)
        angle = 0.08 * local
        poses[name] = Pose(
            position=np.array([scene * 25.0 + local * 1.0, 0.4 * local, 0.0]),
            orientation=np.array([math.cos(angle / 2), 0.0, 0.0, math.sin(angle / 2)]),
        )
    vectors = (all_low @ basis.T).astype(np.float32)
    return SceneDataset(
        vectors=vectors,
        colors=colors,
        image_names=names,
        poses=poses,
        basis=basis,
        noise=noise,
        match_radius=radius,
        d_eff=d_eff,
        images_per_scene=images_per_scene,
        scene_landmarks=scene_landmarks,
        windows=windows,
    )


def make_queries(
    dataset: SceneDataset,
    n_queries: int,
    feats_per_query: int,
    seed: int,
) -> list[QueryImage]:
    """Fresh re-observations of database images (same windows, new noise).

    The source image is the unambiguous best match for each query: it sees
    exactly the query's landmarks, while scene siblings share only part of
    the window and other scenes share nothing within range.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.n_images)
    queries = []
    for qi in range(n_queries):
        src = int(order[qi % dataset.n_images])
        low = _sample_features(
            rng, dataset.image_window(src), feats_per_query, dataset.noise
        )
        queries.append(
            QueryImage(
                name=f"query{qi:05d}",
                source_color=src,
                vectors=(low @ dataset.basis.T).astype(np.float32),
            )
        )
    return queries


def plant_queries(
    dataset: SceneDataset,
    n_plants: int,
    radius: float,
    fmax: float,
    seed: int,
):
    """Queries planted at distance <= fmax*radius from a known database point.

    Displacements stay on the data subspace. Returns (Q, target_colors,
    distances); every distance is positive and at most fmax * radius.
    """
    rng = np.random.default_rng(seed)
    n = dataset.vectors.shape[0]
    idx = rng.integers(0, n, n_plants)
    dirs = rng.standard_normal((n_plants, dataset.d_eff))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dists = radius * fmax * rng.uniform(np.finfo(np.float64).eps, 1.0, n_plants)
    Q = dataset.vectors[idx].astype(np.float64) + (dirs * dists[:, None]) @ dataset.basis.T
    return Q, dataset.colors[idx].astype(np.int64), dists
