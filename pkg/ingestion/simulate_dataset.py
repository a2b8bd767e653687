import json
import logging
from pathlib import Path

import numpy as np

from app.config import CONFIG
from models.loader import save_model
from models.zoo import Box, planted_region_model
from storage.tensor_io import write_ft1

logger = logging.getLogger(__name__)


class SyntheticDatasetSimulator:
    def __init__(self, root, items=20, image_shape=(3, 32, 32), classes=(1, 2, 3), seed=None):
        self.root = Path(root)
        self.items = items
        self.image_shape = tuple(image_shape)
        self.classes = list(classes)
        self.rng = np.random.default_rng(CONFIG["SEED"] if seed is None else seed)
        # boxes smaller than this share of the image are flagged difficult
        self.difficult_fraction = 0.08

    def generate_box(self, half):
        """Random box inside the left (half=0) or right (half=1) half of the image"""
        _, height, width = self.image_shape
        span = width // 2
        box_h = int(self.rng.integers(max(2, height // 5), max(3, height // 2) + 1))
        box_w = int(self.rng.integers(max(2, span // 3), max(3, span - 1) + 1))
        top = int(self.rng.integers(0, height - box_h + 1))
        left = half * span + int(self.rng.integers(0, span - box_w + 1))
        return Box(top, left, box_h, box_w)

    def generate_item(self, index):
        """One positive image with one or two class regions in disjoint halves"""
        image = self.rng.uniform(0.2, 1.0, size=self.image_shape).astype(np.float32)
        count = int(self.rng.integers(1, 3))
        classes = self.rng.choice(self.classes, size=count, replace=False)
        halves = self.rng.permutation(2)[:count]
        regions = [(int(c), self.generate_box(int(h))) for c, h in zip(classes, halves)]
        return image, regions

    def write(self):
        """Write images, one planted model per region, and the manifest"""
        self.root.mkdir(parents=True, exist_ok=True)
        _, height, width = self.image_shape
        entries = []
        for index in range(self.items):
            item_id = f"item{index:03d}"
            image, regions = self.generate_item(index)
            write_ft1(self.root / f"{item_id}.ft1", image)
            region_entries = []
            for class_id, box in regions:
                model_name = f"{item_id}_c{class_id}.json"
                save_model(planted_region_model(box, 1.0, self.image_shape), self.root / model_name)
                region_entries.append({
                    "class": class_id,
                    "box": box.to_list(),
                    "model": model_name,
                    "difficult": box.area / (height * width) < self.difficult_fraction,
                })
            entries.append({"id": item_id, "image": f"{item_id}.ft1", "regions": region_entries})

        manifest = self.root / "manifest.json"
        manifest.write_text(json.dumps({"items": entries}, indent=2))
        logger.info("✅ Simulated %d items into %s", self.items, self.root)
        return manifest


def simulate(root, items=20, image_shape=(3, 32, 32), seed=None):
    return SyntheticDatasetSimulator(root, items, image_shape, seed=seed).write()
