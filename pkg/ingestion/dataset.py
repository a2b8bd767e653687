"""
Annotated-image manifests for the pointing benchmark.

Manifest layout (paths relative to the manifest file):

    {
      "models": {"<class id>": "model.json"},          # optional per-class fallback
      "items": [
        {"id": "item000", "image": "item000.ft1",
         "regions": [{"class": 1, "box": [top, left, height, width],
                      "model": "item000_c1.json", "difficult": false},
                     {"class": 2, "mask": "item000_c2.png"}]}
      ]
    }
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np

from app.errors import InputError
from models.zoo import Box
from storage.tensor_io import read_ft1, read_image, read_mask_png

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Region:
    class_id: int
    mask: np.ndarray = field(repr=False)
    box: Optional[Box] = None
    model_path: Optional[Path] = None
    difficult: bool = False

    def contains(self, row: int, col: int) -> bool:
        return bool(self.mask[row, col])


@dataclass
class AnnotatedImage:
    item_id: str
    image: np.ndarray = field(repr=False)
    regions: List[Region] = field(default_factory=list)

    @property
    def classes(self) -> List[int]:
        return sorted({r.class_id for r in self.regions})

    @property
    def shape(self):
        return self.image.shape


@dataclass
class Dataset:
    items: List[AnnotatedImage]
    class_models: Dict[int, Path] = field(default_factory=dict)
    root: Optional[Path] = None

    def __len__(self):
        return len(self.items)

    def __iter__(self) -> Iterator[AnnotatedImage]:
        return iter(self.items)


def _region(entry: dict, item_id: str, height: int, width: int, root: Path) -> Region:
    if "class" not in entry:
        raise InputError(f"{item_id}: region without a class id")
    class_id = int(entry["class"])
    box = None
    if "box" in entry:
        box = Box(*entry["box"])
        if not box.fits(height, width):
            raise InputError(f"{item_id}: box {entry['box']} outside image {height}x{width}")
        mask = box.indicator(height, width) > 0
    elif "mask" in entry:
        path = root / entry["mask"]
        if not path.is_file():
            raise InputError(f"{item_id}: region mask not found: {path}")
        values = read_ft1(path) if path.suffix.lower() == ".ft1" else read_mask_png(path)
        if values.shape != (height, width):
            raise InputError(f"{item_id}: region mask {values.shape} does not match image {height}x{width}")
        mask = values > 0.5
    else:
        raise InputError(f"{item_id}: region of class {class_id} needs a 'box' or a 'mask'")
    if not mask.any():
        raise InputError(f"{item_id}: region of class {class_id} is empty")
    model_path = root / entry["model"] if entry.get("model") else None
    return Region(class_id, mask, box, model_path, bool(entry.get("difficult", False)))


def load_manifest(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: invalid manifest JSON ({err})") from err
    root = path.parent
    items = []
    for index, entry in enumerate(manifest.get("items", [])):
        item_id = str(entry.get("id", f"item{index}"))
        image_path = root / entry.get("image", "")
        if not image_path.is_file():
            raise InputError(f"{item_id}: image not found: {image_path}")
        image = read_image(image_path)
        regions = [_region(r, item_id, *image.shape[-2:], root) for r in entry.get("regions", [])]
        if not regions:
            raise InputError(f"{item_id}: no annotated regions")
        items.append(AnnotatedImage(item_id, image, regions))
    class_models = {int(k): root / v for k, v in manifest.get("models", {}).items()}
    logger.info("Loaded manifest %s: %d items", path.name, len(items))
    return Dataset(items, class_models, root)
