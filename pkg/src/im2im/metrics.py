"""kNN-hypersphere precision/recall and the Frechet distance over embeddings.

The manifold estimate around a feature set places a hypersphere at each
vector with radius equal to the Euclidean distance to its k-th nearest
neighbor within the same set (the query point itself excluded). A vector is
a member of the estimate when it falls inside ANY hypersphere - the
existential reading of the membership rule. Precision averages membership of
generated vectors in the real manifold; recall is the mirror image.

The FID trace term is computed as Tr((C_r^1/2 C_g C_r^1/2)^1/2), which
equals Tr((C_r C_g)^1/2) for PSD matrices while keeping every matrix square
root symmetric.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint
from .data import load_dataset
from .models import Network, forward
from .rng import RngStream
from .tensor import Tensor

COV_DIVISOR = "n-1"


@dataclass
class FeatureSet:
    """An n x d matrix of embedded feature vectors."""

    vectors: np.ndarray
    source: str = "real"  # "generated" | "real"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"feature set must be 2-d, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("feature set contains non-finite entries")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class GaussianStats:
    mu: np.ndarray
    cov: np.ndarray


def _pairwise_distances(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    diff = xs[:, None, :] - ys[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def knn_radius(phi_set: FeatureSet, k: int) -> np.ndarray:
    """Distance from each vector to its k-th nearest other vector in the set."""
    n = len(phi_set)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n <= k:
        raise ValueError(f"need at least k+1 = {k + 1} vectors, got {n}")
    dists = _pairwise_distances(phi_set.vectors, phi_set.vectors)
    np.fill_diagonal(dists, np.inf)  # self excluded
    return np.partition(dists, k - 1, axis=1)[:, k - 1]


def membership(phi: np.ndarray, phi_set: FeatureSet, radii: np.ndarray) -> int:
    """1 iff phi lies inside the hypersphere of any vector in the set."""
    diff = phi_set.vectors - np.asarray(phi, dtype=np.float64)
    dists = np.sqrt((diff * diff).sum(axis=-1))
    return int(np.any(dists <= radii))


def precision_recall(gen: FeatureSet, real: FeatureSet, k: int) -> tuple:
    """Fraction of generated vectors inside the real manifold, and vice versa."""
    real_radii = knn_radius(real, k)
    gen_radii = knn_radius(gen, k)
    d_gen_real = _pairwise_distances(gen.vectors, real.vectors)
    precision = float((d_gen_real <= real_radii[None, :]).any(axis=1).mean())
    recall = float((d_gen_real.T <= gen_radii[None, :]).any(axis=1).mean())
    return precision, recall


def gaussian_stats(features: FeatureSet) -> GaussianStats:
    """Sample mean and (n-1)-divisor covariance, symmetrized."""
    n = len(features)
    if n < 2:
        raise ValueError(f"need at least 2 feature vectors for covariance, got {n}")
    mu = features.vectors.mean(axis=0)
    centered = features.vectors - mu
    cov = centered.T @ centered / (n - 1)
    return GaussianStats(mu=mu, cov=(cov + cov.T) / 2.0)


def matrix_sqrt_psd(mat: np.ndarray, symmetry_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negatives clamped to 0."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"matrix_sqrt_psd expects a square matrix, got {mat.shape}")
    scale = max(1.0, float(np.abs(mat).max()))
    if float(np.abs(mat - mat.T).max()) > symmetry_tol * scale:
        raise ValueError("matrix_sqrt_psd input is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(mat)
    root = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return (root + root.T) / 2.0


def fid(stats_r: GaussianStats, stats_g: GaussianStats) -> float:
    """|mu_r - mu_g|^2 + Tr(C_r + C_g - 2 (C_r C_g)^1/2), clamped at zero."""
    if stats_r.mu.shape != stats_g.mu.shape:
        raise ValueError(
            f"FID dimension mismatch: {stats_r.mu.shape} vs {stats_g.mu.shape}"
        )
    delta = stats_r.mu - stats_g.mu
    root_r = matrix_sqrt_psd(stats_r.cov)
    inner = root_r @ stats_g.cov @ root_r
    trace_cross = float(np.trace(matrix_sqrt_psd((inner + inner.T) / 2.0)))
    value = float(delta @ delta) + float(
        np.trace(stats_r.cov) + np.trace(stats_g.cov) - 2.0 * trace_cross
    )
    if value < 0.0:
        if value < -1e-6:
            warnings.warn(f"FID came out {value:.3e} < -1e-6; clamping to 0", RuntimeWarning)
        value = 0.0
    return value


def fid_from_features(gen: FeatureSet, real: FeatureSet) -> float:
    return fid(gaussian_stats(real), gaussian_stats(gen))


# -- embeddings -----------------------------------------------------------------


class RandomProjectionEmbedder:
    """Fixed seeded Gaussian projection of flattened pixels, unit-norm rows.

    Deterministic and dependency free: the projection matrix is a pure
    function of (seed, dim, input size), so the same image always maps to the
    same vector bit for bit.
    """

    def __init__(self, dim: int = 64, seed: int = 271828):
        self.dim = dim
        self.seed = seed
        self._matrices: dict[int, np.ndarray] = {}

    @property
    def name(self) -> str:
        return f"randproj{self.dim}-seed{self.seed}"

    def _matrix(self, in_dim: int) -> np.ndarray:
        if in_dim not in self._matrices:
            gen = np.random.Generator(np.random.PCG64([self.seed, self.dim, in_dim]))
            mat = gen.standard_normal((self.dim, in_dim))
            mat /= np.linalg.norm(mat, axis=1, keepdims=True)
            self._matrices[in_dim] = mat
        return self._matrices[in_dim]

    def embed(self, images) -> np.ndarray:
        flat = np.stack([np.asarray(img, dtype=np.float64).reshape(-1) for img in images])
        return flat @ self._matrix(flat.shape[1]).T


def read_feature_file(path) -> np.ndarray:
    """Parse the external embedding format: 'n d' header then n rows of d scalars."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().split("\n")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"{path}:1: expected header 'n d', got {lines[0]!r}")
    try:
        n, d = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ValueError(f"{path}:1: expected integer header 'n d'") from exc
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        values = line.split()
        if len(values) != d:
            raise ValueError(f"{path}:{i}: expected {d} values, got {len(values)}")
        try:
            rows.append([float(v) for v in values])
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: non-numeric value") from exc
    if len(rows) != n:
        raise ValueError(f"{path}: header says {n} rows, found {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def write_feature_file(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


# -- end-to-end evaluation ---------------------------------------------------------


def translate_images(net: Network, images, seed: int, batch_size: int = 16) -> list:
    """Run the generator over a list of (C,H,W) arrays; dropout stays active."""
    rng = RngStream(seed)
    out = []
    for start in range(0, len(images), batch_size):
        batch = Tensor(np.stack(images[start : start + batch_size], dtype=np.float32))
        fake = forward(net, batch, rng=rng, bn_mode="running", bn_update=False)
        out.extend(np.asarray(fake.data, dtype=np.float32))
    return out


def detect_layout(dataset_path) -> str:
    dataset_path = Path(dataset_path)
    return "two_dirs" if (dataset_path / "valA").is_dir() or (dataset_path / "trainA").is_dir() else "side_by_side"


def evaluate(
    checkpoint_path,
    dataset_path,
    embedder: Optional[RandomProjectionEmbedder] = None,
    k: int = 3,
    n_samples: int = 256,
    seed: int = 0,
    split: str = "val",
) -> dict:
    """Generate n_samples translations, embed both sets, report all metrics."""
    embedder = embedder or RandomProjectionEmbedder()
    layout = detect_layout(dataset_path)
    set_a, set_b = load_dataset(dataset_path, layout, split)
    if n_samples > len(set_b):
        raise ValueError(
            f"n_samples = {n_samples} exceeds the {len(set_b)} available real images"
        )
    if n_samples > len(set_a):
        raise ValueError(
            f"n_samples = {n_samples} exceeds the {len(set_a)} available input images"
        )
    net = load_checkpoint(checkpoint_path).eval()
    fakes = translate_images(net, set_a.images[:n_samples], seed=seed)
    reals = set_b.images[:n_samples]
    phi_g = FeatureSet(embedder.embed(fakes), "generated")
    phi_r = FeatureSet(embedder.embed(reals), "real")
    return build_report(phi_g, phi_r, k=k, embedder_name=embedder.name, seed=seed)


def build_report(phi_g: FeatureSet, phi_r: FeatureSet, k: int, embedder_name: str, seed: int) -> dict:
    precision, recall = precision_recall(phi_g, phi_r, k)
    return {
        "precision": precision,
        "recall": recall,
        "fid": fid_from_features(phi_g, phi_r),
        "k": k,
        "embedder": embedder_name,
        "n": len(phi_g),
        "seed": seed,
        "cov_divisor": COV_DIVISOR,
    }


def report_text(report: dict) -> str:
    """Key-value metric report with 17-significant-digit float formatting."""
    lines = []
    for key in ("precision", "recall", "fid", "k", "embedder", "n", "seed", "cov_divisor"):
        value = report[key]
        if isinstance(value, float):
            value = format(value, ".17g")
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
