from models.loader import load_model, save_model
from models.zoo import (Box, LayerModel, SplitModel, additive_channel_model, planted_channel_model,
                        planted_region_model)

__all__ = ["Box", "LayerModel", "SplitModel", "additive_channel_model", "load_model",
           "planted_channel_model", "planted_region_model", "save_model"]
