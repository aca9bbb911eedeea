"""Pretrained torchvision classifiers behind the ServedModel interface.

The server owns preprocessing: clients send raw [0,1] pixels at the declared
shape and standardization happens here, so the attacker's epsilon stays in
pixel units.  Imported lazily; loading fails fast if torch, torchvision, or
the weights are unavailable.
"""

from __future__ import annotations

import numpy as np

from .bbox_models import ServedModel


def load_torchvision_model(name: str, device: str = "cpu") -> ServedModel:
    try:
        import torch
        from torchvision import models as tv_models
    except ImportError as exc:  # fail fast with a clear message
        raise RuntimeError(
            f"torchvision model {name!r} requested but torch/torchvision "
            f"are not installed: {exc}"
        ) from exc

    weights = tv_models.get_model_weights(name).DEFAULT
    model = tv_models.get_model(name, weights=weights).to(device).eval()

    transforms = weights.transforms()
    crop = transforms.crop_size[0] if hasattr(transforms, "crop_size") else 224
    mean = torch.tensor(transforms.mean, device=device).view(3, 1, 1)
    std = torch.tensor(transforms.std, device=device).view(3, 1, 1)
    shape = (3, crop, crop)
    classes = len(weights.meta.get("categories", [])) or 1000

    @torch.no_grad()
    def forward(flat_image: np.ndarray) -> np.ndarray:
        pixels = torch.from_numpy(np.ascontiguousarray(flat_image)).float()
        pixels = pixels.view(1, *shape).to(device)
        logits = model((pixels - mean) / std)
        return logits[0].detach().cpu().double().numpy()

    return ServedModel(shape, classes, forward)
