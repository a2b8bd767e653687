import os
from dotenv import load_dotenv

load_dotenv()


def _floats(name, default):
    raw = os.getenv(name)
    if not raw:
        return list(default)
    return [float(v) for v in raw.split(",") if v.strip()]


def _optional_float(name):
    raw = os.getenv(name)
    return float(raw) if raw else None


CONFIG = {
    # spatial optimisation schedule
    "ITERATIONS": int(os.getenv("EXTREMAL_ITERATIONS", 1600)),
    "MOMENTUM": float(os.getenv("EXTREMAL_MOMENTUM", 0.9)),
    "LEARNING_RATE": float(os.getenv("EXTREMAL_LR", 0.05)),
    "LAMBDA0": float(os.getenv("EXTREMAL_LAMBDA0", 300.0)),
    "INV_TEMPERATURE": float(os.getenv("EXTREMAL_INV_TEMP", 20.0)),
    "AREAS": _floats("EXTREMAL_AREAS", [0.05, 0.1, 0.2, 0.4, 0.6, 0.8]),
    "POINTING_AREAS": _floats("EXTREMAL_POINTING_AREAS", [0.025, 0.05, 0.1, 0.2]),
    "OBJECTIVE": os.getenv("EXTREMAL_OBJECTIVE", "preservation"),
    "TAU": float(os.getenv("EXTREMAL_TAU", 1.0)),
    "DELETION_TOLERANCE": float(os.getenv("EXTREMAL_DELETION_TOLERANCE", 0.1)),

    # smooth mask generator (desk scale; 224-px images use step 7, sigma 21)
    "MASK_STEP": int(os.getenv("EXTREMAL_STEP", 1)),
    "MASK_SIGMA": float(os.getenv("EXTREMAL_SIGMA", 1.0)),
    "MASK_MARGIN": int(os.getenv("EXTREMAL_MARGIN", 0)),
    "MASK_BORDER": os.getenv("EXTREMAL_BORDER", "own"),

    # perturbation pyramid
    "PERTURBATION": os.getenv("EXTREMAL_PERTURBATION", "blur"),
    "PYRAMID_LEVELS": int(os.getenv("EXTREMAL_LEVELS", 8)),
    "SIGMA_MAX": _optional_float("EXTREMAL_SIGMA_MAX"),
    "BLUR_SIGMA_FRACTION": 0.09,
    "BLUR_SIGMA_FLOOR": 2.0,

    # channel attribution
    "CHANNEL_ITERATIONS": 300,
    "CHANNEL_LEARNING_RATE": 1e-2,
    "CHANNEL_LAMBDA_MAX": 1500.0,
    "CHANNEL_RAMP_FRACTION": 0.5,
    "CHANNEL_AREAS": [1, 5, 10, 20, 25],

    # feature inversion
    "INVERSION_STEPS": 200,
    "INVERSION_LR": 0.1,

    # evaluation
    "SALIENCY_SIGMA_FRACTION": 0.09,
    "MASK_THRESHOLD": 0.5,

    "SEED": int(os.getenv("EXTREMAL_SEED", 0)),
    "THREADS": max(1, int(os.getenv("EXTREMAL_THREADS", 1))),
    "IMAGE_SHAPE": (3, 64, 64),
}
