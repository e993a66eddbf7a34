"""Flat ``key = value`` configuration files and the pipeline configuration."""

from dataclasses import dataclass, field, replace

from .blur import ExposureModel
from .deblur import StepSizes
from .energy import EnergyWeights
from .errors import MalformedFileError
from .sceneflow import FeatureParams, RansacParams


def parse_kv_text(text: str) -> dict:
    """Parse one ``key = value`` pair per line; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedFileError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read())


def format_kv(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


@dataclass
class PipelineConfig:
    """Every knob of the joint pipeline, overridable from a kv file."""

    weights: EnergyWeights = field(default_factory=EnergyWeights)
    exposure: ExposureModel = field(default_factory=ExposureModel)
    steps: StepSizes = field(default_factory=StepSizes)
    feature: FeatureParams = field(default_factory=FeatureParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    slic_target: int = 0  # 0 = one superpixel per ~400 pixels
    slic_compactness: float = 10.0
    slic_iters: int = 10
    depth_fill_beta: float = 0.5
    l_max: int = 16
    trws_sweeps: int = 50
    trws_tol: float = 1e-4
    inner_iters: int = 30
    gs_passes: int = 2
    outer_iterations: int = 6
    seed: int = 0
    baseline: float = 0.54  # meters, virtual stereo rig for depth metrics
    two_frame_mode: str = "off"  # off | drop_prev | drop_next

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if self.two_frame_mode not in ("off", "drop_prev", "drop_next"):
            raise ValueError("two_frame_mode must be off|drop_prev|drop_next")

    @property
    def directions(self) -> tuple:
        if self.two_frame_mode == "drop_prev":
            return ("next",)
        if self.two_frame_mode == "drop_next":
            return ("prev",)
        return ("prev", "next")

    def slic_target_for(self, width: int, height: int) -> int:
        return self.slic_target if self.slic_target > 0 else max(1, width * height // 400)

    @staticmethod
    def from_kv(pairs: dict) -> "PipelineConfig":
        cfg = PipelineConfig()
        weights = {}
        exposure = {}
        steps = {}
        feature = {}
        ransac = {}
        simple = {}
        weight_names = {f.name for f in EnergyWeights.__dataclass_fields__.values()}
        for key, value in pairs.items():
            if key in weight_names:
                weights[key] = float(value)
            elif key == "exposure_n":
                exposure["half_samples"] = int(value)
            elif key == "exposure_tau":
                exposure["duty_cycle"] = float(value)
            elif key in ("gamma", "mu", "eta"):
                steps[key] = float(value)
            elif key.startswith("feature_"):
                name = key[len("feature_") :]
                kind = type(getattr(FeatureParams(), name))
                feature[name] = kind(value)
            elif key.startswith("ransac_"):
                name = key[len("ransac_") :]
                kind = type(getattr(RansacParams(), name))
                ransac[name] = kind(value)
            elif key in PipelineConfig.__dataclass_fields__:
                kind = type(getattr(cfg, key))
                simple[key] = kind(value)
            else:
                raise MalformedFileError(f"unknown config key {key!r}")
        return PipelineConfig(
            weights=replace(EnergyWeights(), **weights),
            exposure=replace(ExposureModel(), **exposure),
            steps=replace(StepSizes(), **steps),
            feature=replace(FeatureParams(), **feature),
            ransac=replace(RansacParams(), **ransac),
            **simple,
        )

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        return PipelineConfig.from_kv(parse_kv_file(path))
