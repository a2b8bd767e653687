"""Run output directory: JSON summaries, pandas CSV curves, mask PNG + FT1 files."""
import json
import logging
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from storage.tensor_io import write_ft1, write_heatmap_png, write_image_png, write_mask_png

logger = logging.getLogger(__name__)

# score curves saturate here once normalised by phi0
NORMALIZED_CAP = 1.25


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class RunArtifacts:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def path(self, name) -> Path:
        return self.out_dir / name

    def _track(self, path: Path) -> Path:
        self.written.append(path)
        logger.info("Wrote %s", path)
        return path

    def write_json(self, name, data) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(_plain(data), indent=2))
        return self._track(path)

    def write_csv(self, name, frame) -> Path:
        frame = frame if isinstance(frame, pd.DataFrame) else pd.DataFrame(frame)
        path = self.path(name)
        frame.to_csv(path, index=False)
        return self._track(path)

    def write_mask(self, stem, mask) -> List[str]:
        """PNG and FT1 copies of an H x W mask; returns the file names."""
        png = self._track(write_mask_png(self.path(f"{stem}.png"), mask))
        ft1 = self._track(write_ft1(self.path(f"{stem}.ft1"), mask))
        return [png.name, ft1.name]

    def write_tensor(self, name, array) -> Path:
        return self._track(write_ft1(self.path(name), array))

    def write_heatmap(self, name, values) -> Path:
        return self._track(write_heatmap_png(self.path(name), values))

    def write_image(self, name, image) -> Path:
        return self._track(write_image_png(self.path(name), image))

    def write_run_config(self, config: dict) -> Path:
        return self.write_json("run.json", config)

    # --- domain writers ----------------------------------------------------

    def write_attribution(self, result) -> dict:
        mask_files = []
        for rec in result.records:
            mask_files.extend(self.write_mask(f"mask_a{rec.area:.4f}", rec.mask))
        summary = {**result.to_dict(), "mask_files": mask_files}
        self.write_json("sweep.json", summary)
        phi0 = result.phi0
        normalized = [min(NORMALIZED_CAP, s / phi0) if phi0 else None for s in result.scores]
        self.write_csv("scores.csv", {
            "area": result.areas,
            "score": result.scores,
            "normalized_score": normalized,
            "preserved_score": [r.preserved_score for r in result.records],
            "deleted_score": [r.deleted_score for r in result.records],
            "area_residual": [r.area_residual for r in result.records],
            "achieved_area": [r.achieved_area for r in result.records],
        })
        return summary

    def write_channels(self, result, overlay: np.ndarray) -> dict:
        rows = []
        for rec in result.records:
            self.write_tensor(f"channels_a{rec.count}.ft1", rec.mask)
            rows.extend({"count": rec.count, "channel": k, "weight": float(w)} for k, w in enumerate(rec.mask))
        self.write_csv("channel_masks.csv", rows)
        self.write_tensor("overlay.ft1", overlay)
        self.write_heatmap("overlay.png", overlay)
        summary = result.to_dict()
        self.write_json("channels.json", summary)
        return summary

    def write_pointing(self, result) -> dict:
        self.write_csv("pointing.csv", pd.DataFrame(result.log, columns=["item", "class", "hit", "difficult"]))
        if result.errors:
            self.write_csv("pointing_errors.csv", result.errors)
        summary = result.summary()
        self.write_json("pointing.json", summary)
        return summary
