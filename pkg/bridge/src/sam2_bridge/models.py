"""Model adapters behind the server.

Every adapter exposes the same four calls:

- ``load()`` -> (patch_grid, embed_dim), called once at ``init``
- ``encode(image)`` -> (P, P, K) float32 feature grid
- ``predict(image, features, point, box)`` -> (mask bool (U, V), score)
- ``auto_masks(image, features, points_per_side)`` -> list of (mask, score)

Coordinates follow the wire protocol: (u, v) = (row, col).

``SyntheticModel`` is a dependency-free stand-in used for protocol
conformance, fuzzing, and soak testing: features are patch color
statistics and prompts grow a connected region of similar color around
the point. ``Sam2Model`` wraps the real segmentation model and is only
importable when its stack is installed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


class ModelError(Exception):
    pass


class SyntheticModel:
    """Deterministic color-based segmenter; no ML dependencies."""

    def __init__(self, patch_grid: int = 16, embed_dim: int = 32,
                 color_tolerance: float = 28.0):
        self.patch_grid = patch_grid
        self.embed_dim = embed_dim
        self.color_tolerance = color_tolerance

    def load(self) -> tuple[int, int]:
        return self.patch_grid, self.embed_dim

    def encode(self, image: np.ndarray) -> np.ndarray:
        p = self.patch_grid
        u_count, v_count = image.shape[:2]
        img = image.astype(np.float32)
        edges_u = np.linspace(0, u_count, p + 1).round().astype(int)
        edges_v = np.linspace(0, v_count, p + 1).round().astype(int)
        grid = np.zeros((p, p, self.embed_dim), dtype=np.float32)
        for i in range(p):
            for j in range(p):
                block = img[edges_u[i]:max(edges_u[i + 1], edges_u[i] + 1),
                            edges_v[j]:max(edges_v[j + 1], edges_v[j] + 1)]
                stats = np.concatenate([
                    block.mean(axis=(0, 1)) / 255.0,
                    block.std(axis=(0, 1)) / 255.0,
                ])
                reps = int(np.ceil(self.embed_dim / stats.size))
                grid[i, j] = np.tile(stats, reps)[: self.embed_dim]
        return grid

    def _region_around(self, image: np.ndarray, u: int, v: int) -> np.ndarray:
        img = image.astype(np.float32)
        seed = img[u, v]
        close = np.linalg.norm(img - seed, axis=2) <= self.color_tolerance
        labels, _ = ndimage.label(close)
        return labels == labels[u, v] if close[u, v] else np.zeros(image.shape[:2], bool)

    def predict(self, image: np.ndarray, features: np.ndarray,
                point: tuple[float, float] | None,
                box: tuple[float, float, float, float] | None
                ) -> tuple[np.ndarray, float]:
        u_count, v_count = image.shape[:2]
        if point is not None:
            u = min(max(int(round(point[0])), 0), u_count - 1)
            v = min(max(int(round(point[1])), 0), v_count - 1)
        elif box is not None:
            u = min(max(int(round((box[0] + box[2]) / 2)), 0), u_count - 1)
            v = min(max(int(round((box[1] + box[3]) / 2)), 0), v_count - 1)
        else:
            raise ModelError("prompt needs a point or a box")
        mask = self._region_around(image, u, v)
        if box is not None and mask.any():
            clip = np.zeros_like(mask)
            u0 = max(int(np.floor(box[0])), 0)
            v0 = max(int(np.floor(box[1])), 0)
            u1 = min(int(np.ceil(box[2])), u_count - 1)
            v1 = min(int(np.ceil(box[3])), v_count - 1)
            clip[u0:u1 + 1, v0:v1 + 1] = True
            mask &= clip
        score = float(mask.mean()) if mask.any() else 0.0
        return mask, min(0.99, 0.5 + score)

    def auto_masks(self, image: np.ndarray, features: np.ndarray,
                   points_per_side: int) -> list[tuple[np.ndarray, float]]:
        u_count, v_count = image.shape[:2]
        n = max(int(points_per_side), 1)
        kept: list[tuple[np.ndarray, float]] = []
        for a in range(n):
            for b in range(n):
                u = min(max(int(round((a + 0.5) * u_count / n - 0.5)), 0), u_count - 1)
                v = min(max(int(round((b + 0.5) * v_count / n - 0.5)), 0), v_count - 1)
                mask, score = self.predict(image, features, (u, v), None)
                if not mask.any():
                    continue
                duplicate = False
                for prev, _ in kept:
                    inter = np.count_nonzero(prev & mask)
                    union = np.count_nonzero(prev | mask)
                    if union and inter / union > 0.9:
                        duplicate = True
                        break
                if not duplicate:
                    kept.append((mask, score))
        return kept


class Sam2Model:
    """Wrapper around the SAM 2 image predictor and auto mask generator.

    ``feature_layer`` picks which encoder tensor is exported as the patch
    feature grid; "image_embed" is the final image-encoder embedding.
    The import happens at ``load`` so the server binary runs without the
    model stack installed (the synthetic model covers protocol testing).
    """

    VARIANTS = {
        "hiera-tiny": "facebook/sam2-hiera-tiny",
        "hiera-small": "facebook/sam2-hiera-small",
        "hiera-base-plus": "facebook/sam2-hiera-base-plus",
        "hiera-large": "facebook/sam2-hiera-large",
    }

    def __init__(self, variant: str = "hiera-small", device: str = "auto",
                 feature_layer: str = "image_embed"):
        self.variant = variant
        self.device = device
        self.feature_layer = feature_layer
        self._predictor = None
        self._amg_cls = None

    def load(self) -> tuple[int, int]:
        try:
            import torch
            from sam2.sam2_image_predictor import SAM2ImagePredictor
            from sam2.automatic_mask_generator import SAM2AutomaticMaskGenerator
        except ImportError as exc:
            raise ModelError(
                f"SAM 2 stack not available ({exc}); use --model synthetic "
                "for protocol testing") from exc
        device = self.device
        if device == "auto":
            device = "cuda" if torch.cuda.is_available() else "cpu"
        name = self.VARIANTS.get(self.variant, self.variant)
        self._predictor = SAM2ImagePredictor.from_pretrained(name, device=device)
        self._amg_cls = SAM2AutomaticMaskGenerator
        # probe the feature geometry with a tiny dummy image
        probe = self._feature_grid(np.zeros((32, 32, 3), dtype=np.uint8))
        return probe.shape[0], probe.shape[2]

    def _feature_grid(self, image: np.ndarray) -> np.ndarray:
        """The single place deciding which encoder tensor becomes features."""
        self._predictor.set_image(image)
        feats = self._predictor._features[self.feature_layer]
        grid = feats[0].permute(1, 2, 0).detach().cpu().numpy()
        return np.ascontiguousarray(grid, dtype=np.float32)

    def encode(self, image: np.ndarray) -> np.ndarray:
        return self._feature_grid(image)

    def predict(self, image, features, point, box):
        self._predictor.set_image(image)
        kwargs = {"multimask_output": True}
        if point is not None:
            kwargs["point_coords"] = np.array([[point[1], point[0]]])  # (x, y)
            kwargs["point_labels"] = np.array([1])
        if box is not None:
            kwargs["box"] = np.array([box[1], box[0], box[3], box[2]])
        masks, scores, _ = self._predictor.predict(**kwargs)
        best = int(np.argmax(scores))
        return masks[best].astype(bool), float(scores[best])

    def auto_masks(self, image, features, points_per_side):
        generator = self._amg_cls(self._predictor.model,
                                  points_per_side=int(points_per_side))
        records = generator.generate(image)
        kept: list[tuple[np.ndarray, float]] = []
        for rec in records:
            mask = rec["segmentation"].astype(bool)
            duplicate = False
            for prev, _ in kept:
                inter = np.count_nonzero(prev & mask)
                union = np.count_nonzero(prev | mask)
                if union and inter / union > 0.9:
                    duplicate = True
                    break
            if not duplicate:
                kept.append((mask, float(rec.get("predicted_iou", 0.0))))
        return kept


def build_model(name: str, device: str = "auto", patch_grid: int = 16,
                embed_dim: int = 32, feature_layer: str = "image_embed"):
    if name == "synthetic":
        return SyntheticModel(patch_grid=patch_grid, embed_dim=embed_dim)
    return Sam2Model(variant=name, device=device, feature_layer=feature_layer)
