"""Resolved configuration of one CLI run; written to run.json and replayable from it."""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from analytics.attribution import EngineConfig, Objective, Schedule
from analytics.channels import ChannelSchedule
from app.config import CONFIG
from app.errors import InputError

COMMANDS = ("attribute", "channels", "invert", "pointing", "selftest", "simulate")


@dataclass
class RunConfig:
    command: str
    model: Optional[str] = None
    image: Optional[str] = None
    manifest: Optional[str] = None
    out: str = "runs/latest"
    areas: List[float] = field(default_factory=lambda: list(CONFIG["AREAS"]))
    channel_areas: List[int] = field(default_factory=lambda: list(CONFIG["CHANNEL_AREAS"]))
    objective: str = CONFIG["OBJECTIVE"]
    iterations: int = CONFIG["ITERATIONS"]
    learning_rate: float = CONFIG["LEARNING_RATE"]
    momentum: float = CONFIG["MOMENTUM"]
    lambda0: float = CONFIG["LAMBDA0"]
    inv_temperature: float = CONFIG["INV_TEMPERATURE"]
    sigma: float = CONFIG["MASK_SIGMA"]
    step: int = CONFIG["MASK_STEP"]
    margin: int = CONFIG["MASK_MARGIN"]
    border: str = CONFIG["MASK_BORDER"]
    sigma_max: Optional[float] = CONFIG["SIGMA_MAX"]
    levels: int = CONFIG["PYRAMID_LEVELS"]
    perturbation: str = CONFIG["PERTURBATION"]
    tau: float = CONFIG["TAU"]
    deletion_tolerance: float = CONFIG["DELETION_TOLERANCE"]
    phi0: Optional[float] = None
    channel_iterations: int = CONFIG["CHANNEL_ITERATIONS"]
    channel_learning_rate: float = CONFIG["CHANNEL_LEARNING_RATE"]
    inversion_steps: int = CONFIG["INVERSION_STEPS"]
    inversion_lr: float = CONFIG["INVERSION_LR"]
    items: int = 20
    image_size: int = 32
    seed: int = CONFIG["SEED"]
    threads: int = CONFIG["THREADS"]

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.command in ("attribute", "pointing") and not self.areas:
            raise InputError("area grid is empty")
        for a in self.areas:
            if not 0.0 < a <= 1.0:
                raise InputError(f"areas must lie in (0, 1], got {a}")
        if self.command == "channels" and not self.channel_areas:
            raise InputError("channel grid is empty")
        if self.items < 1 or self.image_size < 4:
            raise InputError("simulate needs at least one item of at least 4x4 pixels")
        Objective.parse(self.objective)
        # constructing the typed configs runs every range check up front
        self.engine()
        self.channel_schedule()

    def schedule(self) -> Schedule:
        return Schedule(self.iterations, self.momentum, self.learning_rate, self.lambda0, self.inv_temperature)

    def engine(self) -> EngineConfig:
        return EngineConfig(schedule=self.schedule(), objective=self.objective, step=self.step,
                            sigma=self.sigma, margin=self.margin, border=self.border,
                            perturbation=self.perturbation,
                            levels=self.levels, sigma_max=self.sigma_max, tau=self.tau,
                            deletion_tolerance=self.deletion_tolerance, threads=self.threads)

    def channel_schedule(self) -> ChannelSchedule:
        return ChannelSchedule.from_config(iterations=self.channel_iterations,
                                           learning_rate=self.channel_learning_rate,
                                           momentum=self.momentum)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown run configuration keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"run configuration not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: invalid run configuration ({err})") from err
