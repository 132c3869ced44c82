import math
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src._compat import Self, StrEnum
from src.exceptions import ConfigurationError


class Group(StrEnum):
    LVO = "LVO"
    NON_LVO = "Non-LVO"
    WIS = "WIS"


class SettingBaseModel(BaseModel):
    model_config = ConfigDict(use_attribute_docstrings=True, extra="forbid")

    @classmethod
    def from_file(cls, path: Path) -> Self:
        """
        Load a YAML or JSON document (JSON is a subset of YAML).
        """
        try:
            with open(path, encoding="utf-8") as f:
                document = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ConfigurationError(f"Config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Config file {path} is not valid YAML/JSON: {e}") from e
        return cls.parse_document(document)

    @classmethod
    def parse_document(cls, document: dict) -> Self:
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e


class TissueCurve(SettingBaseModel):
    """Time-density curve of one tissue class (gamma-variate bolus on a baseline)."""

    baseline_hu: float
    "Pre-contrast attenuation (HU)"
    amplitude_hu: float
    "Peak enhancement above baseline (HU)"
    onset_s: float
    "Bolus arrival time (s)"
    width_s: float = Field(gt=0)
    "Time from bolus arrival to peak enhancement (s)"

    @property
    def peak_time_s(self) -> float:
        return self.onset_s + self.width_s


class LesionGeometry(SettingBaseModel):
    """Ellipsoidal penumbra with a nested core, in voxel units."""

    penumbra_center: tuple[float, float, float] | None = None
    "Center (x, y, z) of the penumbra ellipsoid. None = drawn at random inside the brain for every seed"
    penumbra_radii: tuple[float, float, float] = (7.0, 6.0, 1.5)
    "Radii (x, y, z) of the penumbra ellipsoid"
    core_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    "Offset of the core center from the penumbra center"
    core_radii: tuple[float, float, float] = (3.5, 3.0, 1.0)
    "Radii (x, y, z) of the core ellipsoid"
    non_lvo_scale: float = Field(0.6, gt=0, le=1)
    "Radii multiplier for Non-LVO studies (smaller, more distal lesions)"


class PhantomSpec(SettingBaseModel):
    """Synthetic CT perfusion study generator settings."""

    extents: tuple[int, int, int, int] = (32, 32, 3, 8)
    "Volume extents (X, Y, Z, T)"
    time_schedule: list[float] | None = None
    "Acquisition instants in seconds. None = one frame per second starting at 0"
    pixel_spacing_mm: float = Field(0.4258, gt=0)
    "In-plane resolution (mm/pixel)"
    slice_thickness_mm: float = Field(5.0, gt=0)
    "Slice thickness (mm)"
    rescale_slope: float = 1.0
    "Scanner rescale slope; raw = (HU - intercept) / slope"
    rescale_intercept: float = -1024.0
    "Scanner rescale intercept"
    healthy: TissueCurve = TissueCurve(baseline_hu=35.0, amplitude_hu=40.0, onset_s=1.0, width_s=3.0)
    "Healthy tissue curve"
    penumbra: TissueCurve = TissueCurve(baseline_hu=35.0, amplitude_hu=22.0, onset_s=2.5, width_s=4.0)
    "Penumbra curve: delayed and lower"
    core: TissueCurve = TissueCurve(baseline_hu=30.0, amplitude_hu=6.0, onset_s=2.5, width_s=4.0)
    "Core curve: barely enhancing"
    gamma_shape: float = Field(3.0, gt=0)
    "Shape exponent of the gamma-variate bolus"
    brain_radius_fraction: float = Field(0.8, gt=0, lt=1)
    "Brain radius relative to half the in-plane extent"
    skull_thickness: int = Field(1, ge=0)
    "Skull shell thickness (voxels)"
    skull_hu: float = 800.0
    "Skull attenuation (HU)"
    air_hu: float = -1000.0
    "Background attenuation (HU)"
    lesion: LesionGeometry = LesionGeometry()
    "Lesion geometry"
    groups: list[Group] = [Group.LVO]
    "Patient groups cycled over the generated studies. WIS studies have no lesion"
    noise_sigma: float = Field(2.0, ge=0)
    "Standard deviation of additive Gaussian noise (HU)"
    seed: int = 0
    "Seed of the first generated study"

    @model_validator(mode="after")
    def check_invariants(self) -> Self:
        if any(e < 1 for e in self.extents):
            raise ValueError("All extents must be >= 1")
        schedule = self.schedule()
        if len(schedule) != self.extents[3]:
            raise ValueError(f"time_schedule has {len(schedule)} instants but T = {self.extents[3]}")
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("time_schedule must be strictly increasing")
        if not self.healthy.amplitude_hu > self.penumbra.amplitude_hu > self.core.amplitude_hu:
            raise ValueError("Amplitudes must be ordered healthy > penumbra > core")
        if not self.groups:
            raise ValueError("At least one group is required")
        return self

    def schedule(self) -> list[float]:
        if self.time_schedule is not None:
            return list(self.time_schedule)
        return [float(t) for t in range(self.extents[3])]


class NetworkConfig(SettingBaseModel):
    """Architecture of a mJ-Net variant."""

    architecture: Literal["mjnet_3dtime", "mjnet_4d"] = "mjnet_4d"
    "Which network to build"
    input_extents: tuple[int, int, int, int] = (32, 32, 3, 8)
    "Input extents (X, Y, Z, T); Z is the center slice plus its two neighbors"
    channel_widths: list[int] = [16, 32, 64]
    "Channels per encoder level; the decoder mirrors them. The first width is used by the temporal blocks"
    time_pool_schedule: list[int] = [2, 2, 2]
    "Pool sizes over time, one per temporal block. Their product must equal T"
    convs_per_block: int = Field(1, ge=1)
    "Convolutions per block"
    kernel_size: int = Field(3, ge=1)
    "Kernel extent on every convolved axis (odd)"
    num_classes: int = 3
    "healthy, penumbra, core"
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    "Monte Carlo dropout rate (4D mJ-Net)"
    leaky_alpha: float = Field(1 / 3, ge=0)
    "Leaky ReLU negative slope"
    use_attention: bool = True
    "Attention gates on the skip connections (3D+time mJ-Net only)"
    independent_encoders: bool = True
    "One encoder per input slice with no shared weights (3D+time mJ-Net only)"
    weight_sharing: Literal["group", "offset"] = "group"
    "Grouped 4D layer: one kernel per group, or one kernel per group and neighbor offset"
    conv4d_engine: Literal["decomposed", "direct"] = "decomposed"
    "Grouped 4D layer evaluation: sums of 3D convolutions, or the direct 4D convolution"
    dtype: Literal["float32", "float64"] = "float32"
    "Floating point precision of parameters and activations"
    seed: int = 0
    "Seed of the weight initialization"

    @model_validator(mode="after")
    def check_invariants(self) -> Self:
        x, y, z, t = self.input_extents
        if z != 3:
            raise ValueError(f"Z must be 3 (center slice plus neighbors), got {z}")
        if math.prod(self.time_pool_schedule) != t:
            raise ValueError(f"time_pool_schedule {self.time_pool_schedule} does not collapse T = {t} to 1")
        if not self.channel_widths or any(w < 1 for w in self.channel_widths):
            raise ValueError("channel_widths must be a non-empty list of positive integers")
        levels = len(self.channel_widths) - 1
        if x % 2**levels or y % 2**levels:
            raise ValueError(f"X and Y must be divisible by {2**levels} for {levels} spatial pooling levels")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for same-padded layers")
        if self.num_classes != 3:
            raise ValueError("num_classes must be 3")
        return self


class LossConfig(SettingBaseModel):
    """Training loss and its hyper-parameters."""

    kind: Literal["ftl", "sdcl", "dcl", "wcc"] = "wcc"
    "Focal Tversky, soft Dice, Dice or weighted categorical cross-entropy"
    ftl_alpha: float = Field(0.7, ge=0)
    "Tversky weight of false negatives"
    ftl_beta: float = Field(0.3, ge=0)
    "Tversky weight of false positives"
    ftl_gamma: float = Field(4 / 3, ge=1)
    "Focal exponent (loss uses 1/gamma)"
    non_lvo_penalty: float = Field(2.0, ge=0)
    "Loss multiplier for Non-LVO samples"


class TrainConfig(SettingBaseModel):
    """Optimizer, schedule and regularization."""

    learning_rate: float = Field(0.0003, ge=0)
    "Initial Adam learning rate"
    decay_factor: float = Field(0.95, ge=0)
    "Step decay factor"
    decay_every_epochs: int = Field(10, ge=1)
    "Epochs between decay steps"
    batch_size: int = Field(2, ge=1)
    "Samples per mini-batch"
    early_stop_patience: int = Field(25, ge=1)
    "Epochs without validation improvement before stopping"
    min_delta: float = Field(1e-6, ge=0)
    "Improvements smaller than this do not reset the patience counter"
    max_epochs: int = Field(200, ge=1)
    "Hard cap on the number of epochs"
    l1_weight: float = Field(1e-6, ge=0)
    "L1 penalty on kernels"
    l2_weight: float = Field(1e-5, ge=0)
    "L2 penalty on kernels"
    max_norm: float = Field(2.0, gt=0)
    "Maximum norm of every kernel and bias tensor (use .inf to disable)"
    seed: int = 0
    "Seed of shuffling and dropout"
    loss: LossConfig = LossConfig()
    "Training loss"


class PreprocessConfig(SettingBaseModel):
    """Pre-processing chain toggles."""

    histogram_equalization: bool = True
    "Histogram equalization over brain voxels"
    gamma_correction: bool = True
    "Gamma correction after equalization"
    zscore: bool = True
    "z-score over brain voxels"
    resample: bool = True
    "Linear resampling onto a uniform time grid"
    gamma: float = Field(0.5, gt=0)
    "Gamma exponent"
    histogram_bins: int = Field(256, ge=2)
    "Histogram equalization bins"
    hu_window: tuple[float, float] = (0.0, 100.0)
    "HU window for the brain mask"
    target_dt_s: float = Field(1.0, gt=0)
    "Time step of the resampled grid (s)"


class EvalConfig(SettingBaseModel):
    """Evaluation settings."""

    split: Literal["train", "validation", "test", "all"] = "test"
    "Which split to evaluate"
    mc_samples: int = Field(1, ge=1)
    "Monte Carlo dropout samples per slice"
    hausdorff_mode: Literal["slice", "volume"] = "slice"
    "Hausdorff distance per 2D slice (averaged) or over the 3D volume"
    seed: int = 0
    "Seed of Monte Carlo sampling"


class Settings(SettingBaseModel):
    """Settings for the application."""

    schema_: str = Field(None, alias="$schema")
    phantom: PhantomSpec = PhantomSpec()
    "Phantom generation"
    network: NetworkConfig = NetworkConfig()
    "Network architecture"
    train: TrainConfig = TrainConfig()
    "Training recipe"
    preprocess: PreprocessConfig = PreprocessConfig()
    "Pre-processing chain"
    evaluation: EvalConfig = EvalConfig()
    "Evaluation"

    @classmethod
    def from_yaml(cls, path: Path) -> "Settings":
        return cls.from_file(path)

    @classmethod
    def save_schema(cls, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            schema = {"$schema": "https://json-schema.org/draft-07/schema", **cls.model_json_schema()}
            yaml.dump(schema, f, sort_keys=False)
