"""
Data models and schemas for the percussive dereverberation toolkit
"""
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    """Configuration base: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


class ReverseMode(str, Enum):
    """Reverse-process parameterizations"""
    DIRECT = "direct"
    DELTA = "delta_normalized"


class Split(str, Enum):
    """Dataset partitions"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


# ---------------------------------------------------------------------------
# Configuration sections
# ---------------------------------------------------------------------------

class StftConfig(StrictModel):
    """Spectrogram analysis / synthesis settings"""
    fft_size: int = Field(default=1024, gt=1, description="FFT size in samples")
    hop: int = Field(default=384, gt=0, description="Hop size in samples")
    window: Literal["hann"] = Field(default="hann", description="Periodic analysis/synthesis window")
    segment_seconds: float = Field(default=2.0, gt=0, description="Excerpt length in seconds")
    sample_rate: int = Field(default=44100, gt=0, description="Pipeline sample rate in Hz")

    @model_validator(mode="after")
    def check_geometry(self):
        if self.fft_size % 2:
            raise ValueError("fft_size must be even")
        if self.hop > self.fft_size:
            raise ValueError(f"hop ({self.hop}) must not exceed fft_size ({self.fft_size})")
        samples = self.segment_seconds * self.sample_rate
        if abs(samples - round(samples)) > 1e-6 or round(samples) <= 0:
            raise ValueError(f"segment length {samples} samples is not a positive integer")
        return self

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))


class ScheduleConfig(StrictModel):
    """Degradation schedule settings"""
    steps: int = Field(default=16, ge=1, description="Number of diffusion steps T")
    kind: Literal["cosine_squared"] = Field(default="cosine_squared")


class LossWeights(StrictModel):
    """Weights of the training objective"""
    lambda_aud: float = Field(default=8.0, ge=0, description="Weight of the waveform L1 term")
    delta_weight: float = Field(default=0.7, ge=0, description="Weight of the normalized-update term")
    state_weight: float = Field(default=0.3, ge=0, description="Weight of the next-state term")


class TrainConfig(StrictModel):
    """Optimizer, EMA and loop settings for the reference predictor"""
    mode: ReverseMode = Field(default=ReverseMode.DELTA)
    learning_rate: float = Field(default=1e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    ema_decay: float = Field(default=0.995, ge=0, lt=1)
    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=8, ge=1)
    seed: Optional[int] = Field(default=None, description="Falls back to the run seed when unset")
    share_channels: bool = Field(default=True, description="Left/right channels share parameters")


class RoomSampling(StrictModel):
    """Ranges for randomized shoebox rooms"""
    dims_min: Tuple[float, float, float] = (3.0, 3.0, 2.5)
    dims_max: Tuple[float, float, float] = (10.0, 10.0, 4.0)
    t60_min: float = Field(default=0.2, gt=0)
    t60_max: float = Field(default=1.3, gt=0)
    wall_clearance: float = Field(default=0.5, ge=0, description="Minimum source/mic distance to walls (m)")
    min_source_mic_distance: float = Field(default=0.5, gt=0)
    max_order: Optional[int] = Field(default=None, ge=0, description="None covers the full T60")
    jitter_m: float = Field(default=0.0, ge=0)
    speed_of_sound: float = Field(default=343.0, gt=0)

    @model_validator(mode="after")
    def check_ranges(self):
        for lo, hi in zip(self.dims_min, self.dims_max):
            if not 0 < lo <= hi:
                raise ValueError("room dimension ranges must satisfy 0 < min <= max")
            if lo <= 2 * self.wall_clearance:
                raise ValueError("rooms too small for the requested wall clearance")
        if self.t60_min > self.t60_max:
            raise ValueError("t60_min must not exceed t60_max")
        return self


class RenderConfig(StrictModel):
    """Wet/dry rendering settings"""
    segment_mode: Literal["deterministic", "random"] = "deterministic"
    dry_peak: float = Field(default=0.891, gt=0, le=1, description="Peak level of dry excerpts (about -1 dBFS)")
    wet_gain_db_min: float = 0.0
    wet_gain_db_max: float = 0.0
    peak_ceiling: float = Field(default=0.99, gt=0, le=1)
    n_synthetic_rirs: int = Field(default=8, ge=0)
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    @model_validator(mode="after")
    def check_render(self):
        if self.wet_gain_db_min > self.wet_gain_db_max:
            raise ValueError("wet_gain_db_min must not exceed wet_gain_db_max")
        if any(f < 0 for f in self.split_fractions) or not math.isclose(sum(self.split_fractions), 1.0):
            raise ValueError("split fractions must be non-negative and sum to 1")
        return self


class MetricConfig(StrictModel):
    """Evaluation metric hyperparameters, echoed into every report"""
    mstft_ffts: List[int] = Field(default_factory=lambda: [256, 1024, 4096, 8192])
    mstft_hops: List[int] = Field(default_factory=lambda: [64, 256, 1024, 2048])
    eps: float = Field(default=1e-8, gt=0)
    phase_exclude_silent: bool = True
    si_sdr_cap_db: float = Field(default=60.0, gt=0)
    nmi_bins: int = Field(default=64, gt=1)
    nmi_fft: int = Field(default=1024, gt=0)
    nmi_hop: int = Field(default=384, gt=0)
    env_frame: int = Field(default=1024, gt=0)
    env_hop: int = Field(default=256, gt=0)
    msd_subbands: int = Field(default=16, gt=0)
    msd_mod_max_hz: float = Field(default=50.0, gt=0)
    msd_fmin_hz: float = Field(default=20.0, gt=0)
    msd_min_seconds: float = Field(default=0.5, gt=0)
    tter_transient_ms: float = Field(default=20.0, gt=0)
    tter_tail_ms: float = Field(default=200.0, gt=0)
    onset_fft: int = Field(default=1024, gt=0)
    onset_hop: int = Field(default=384, gt=0)
    onset_tolerance_ms: float = Field(default=50.0, gt=0)
    onset_min_gap_ms: float = Field(default=50.0, gt=0)
    onset_median_frames: int = Field(default=8, gt=0, description="Half-width of the moving-median threshold")
    onset_delta: float = Field(default=0.1, ge=0, description="Threshold offset relative to the flux maximum")
    onset_log_gain: float = Field(default=1.0, gt=0, description="Compression gain in log(1 + gain*|S|)")

    @model_validator(mode="after")
    def check_resolutions(self):
        if len(self.mstft_ffts) != len(self.mstft_hops) or not self.mstft_ffts:
            raise ValueError("mstft_ffts and mstft_hops must be non-empty and the same length")
        if any(v <= 0 for v in self.mstft_ffts + self.mstft_hops):
            raise ValueError("STFT sizes and hops must be positive")
        return self


class RunConfig(StrictModel):
    """Versioned configuration file shared by every CLI command"""
    format_version: Literal[1] = 1
    seed: int = Field(default=0, ge=0)
    jobs: int = Field(default=1, ge=1)
    stft: StftConfig = Field(default_factory=StftConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    rooms: RoomSampling = Field(default_factory=RoomSampling)
    render: RenderConfig = Field(default_factory=RenderConfig)
    metrics: MetricConfig = Field(default_factory=MetricConfig)


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------

class Waveform(BaseModel):
    """Stereo time-domain signal, shape 2×N, full scale [-1, 1]"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray = Field(..., description="Samples, shape (2, N)")
    sample_rate: int = Field(default=44100, gt=0, description="Sample rate in Hz")

    @field_validator("samples", mode="before")
    @classmethod
    def validate_samples(cls, v):
        arr = np.asarray(v)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ValueError(f"waveform must be stereo with shape (2, N), got {arr.shape}")
        if arr.shape[1] == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        return arr

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


class SpectroTensor(BaseModel):
    """Stereo RI spectrogram: channels [Re L, Im L, Re R, Im R], shape 4×F×K"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    fft_size: int = Field(..., gt=1)
    hop: int = Field(..., gt=0)
    sample_rate: int = Field(default=44100, gt=0)

    @field_validator("data", mode="before")
    @classmethod
    def validate_data(cls, v):
        arr = np.asarray(v)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 3 or arr.shape[0] != 4:
            raise ValueError(f"spectrogram must have shape (4, F, K), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("spectrogram contains non-finite entries")
        return arr

    @model_validator(mode="after")
    def check_bins(self):
        if self.data.shape[1] != self.fft_size // 2 + 1:
            raise ValueError(
                f"spectrogram has {self.data.shape[1]} bins, expected {self.fft_size // 2 + 1} "
                f"for fft_size={self.fft_size}"
            )
        return self

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[2])

    def with_data(self, data: np.ndarray) -> "SpectroTensor":
        """Same metadata, new array; the caller is responsible for shape and finiteness"""
        return SpectroTensor.model_construct(
            data=data, fft_size=self.fft_size, hop=self.hop, sample_rate=self.sample_rate
        )


# ---------------------------------------------------------------------------
# Rooms and impulse responses
# ---------------------------------------------------------------------------

class RoomSpec(StrictModel):
    """Shoebox room for image-source synthesis"""
    dims: Tuple[float, float, float] = Field(..., description="Room size (Lx, Ly, Lz) in meters")
    source_pos: Tuple[float, float, float]
    mic_pos: Tuple[float, float, float]
    t60_target: float = Field(..., gt=0, description="Requested reverberation time in seconds")
    max_order: Optional[int] = Field(default=None, ge=0, description="Reflection order cap; None covers T60")
    sample_rate: int = Field(default=44100, gt=0)
    seed: int = Field(default=0, ge=0)
    jitter_m: float = Field(default=0.0, ge=0, description="Seeded displacement of source and mic per axis (m)")
    speed_of_sound: float = Field(default=343.0, gt=0)

    @model_validator(mode="after")
    def check_geometry(self):
        for name, pos in (("source_pos", self.source_pos), ("mic_pos", self.mic_pos)):
            for p, d in zip(pos, self.dims):
                if not 0 < p < d:
                    raise ValueError(f"{name} {pos} lies outside the room {self.dims}")
        if tuple(self.source_pos) == tuple(self.mic_pos):
            raise ValueError("source and microphone must not coincide")
        return self

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.mic_pos)))


class RirProvenance(StrictModel):
    """Where an impulse response came from"""
    kind: Literal["synthetic", "measured", "identity"]
    room: Optional[RoomSpec] = None
    file_id: Optional[str] = None
    path: Optional[str] = Field(default=None, description="Measured file, relative to the manifest when rendered")


class RirSample(BaseModel):
    """Room impulse response: taps shape (L,) mono or (2, L) stereo"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    taps: np.ndarray
    sample_rate: int = Field(default=44100, gt=0)
    provenance: RirProvenance

    @field_validator("taps", mode="before")
    @classmethod
    def validate_taps(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim not in (1, 2) or (arr.ndim == 2 and arr.shape[0] != 2):
            raise ValueError(f"taps must have shape (L,) or (2, L), got {arr.shape}")
        if arr.shape[-1] == 0:
            raise ValueError("impulse response is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("impulse response contains non-finite taps")
        return arr

    @property
    def is_stereo(self) -> bool:
        return self.taps.ndim == 2


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

class PairedExample(StrictModel):
    """One aligned dry/wet excerpt pair"""
    id: str = Field(..., description="Unique example identifier, also the estimate file stem")
    source_file: str = Field(..., description="Dry source file the excerpt was cut from")
    split: Split
    dry_path: str = Field(..., description="Dry WAV, relative to the manifest")
    wet_path: str = Field(..., description="Wet WAV, relative to the manifest")
    rir_ref: RirProvenance
    segment_index: int = Field(..., ge=0)
    segment_offset: int = Field(..., ge=0, description="Excerpt start in the source, in samples")
    wet_gain_db: float
    seed: int
    augmentation: Optional[Dict[str, Any]] = Field(default=None, description="Reserved")


class SkippedFile(StrictModel):
    """Input that could not be used"""
    path: str
    reason: str


class ManifestHeader(StrictModel):
    """First line of a manifest file"""
    kind: Literal["header"] = "header"
    format_version: Literal[1] = 1
    seed: int
    num_sources: int
    skipped: List[SkippedFile] = Field(default_factory=list)
    config: Dict[str, Any] = Field(..., description="Resolved RunConfig snapshot")


class Manifest(BaseModel):
    """Header plus paired examples; optionally restricted to one split"""
    header: ManifestHeader
    entries: List[PairedExample]
    split: Optional[Split] = None
    base_dir: Optional[Path] = Field(default=None, exclude=True)

    def select(self, split: Optional[Split]) -> "Manifest":
        if split is None:
            return self
        return Manifest(
            header=self.header,
            entries=[e for e in self.entries if e.split == split],
            split=split,
            base_dir=self.base_dir,
        )


class ValidationIssue(BaseModel):
    """One failed manifest check"""
    entry_id: Optional[str] = None
    message: str


class ValidationReport(BaseModel):
    """Result of validate_manifest"""
    passed: bool
    checked: int
    issues: List[ValidationIssue] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class EpochRecord(BaseModel):
    """Per-epoch training log row"""
    epoch: int
    loss: float
    spec: float
    aud: float
    val_loss: Optional[float] = None


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

METRIC_NAMES = (
    "mstft_mag", "mstft_phase", "esr", "si_sdr", "si_sdri",
    "nmi", "msd", "env", "tter", "onfi",
)


class MetricRow(BaseModel):
    """All metric values for one (estimate, reference, reverberant) triple"""
    example_id: str = ""
    mstft_mag: float
    mstft_phase: float
    esr: float
    si_sdr: float
    si_sdri: float
    nmi: float
    msd: float
    env: float
    tter: float
    onfi: float


class MetricAggregate(BaseModel):
    """Mean and population standard deviation of one metric"""
    mean: float
    std: float


class MetricFailure(BaseModel):
    """Example that could not be evaluated"""
    example_id: str
    error: str


class MetricReport(BaseModel):
    """Per-example rows, aggregates and failures of a batch evaluation"""
    rows: List[MetricRow] = Field(default_factory=list)
    aggregates: Dict[str, MetricAggregate] = Field(default_factory=dict)
    failures: List[MetricFailure] = Field(default_factory=list)
    skipped: int = 0
    config: MetricConfig = Field(default_factory=MetricConfig)


# ---------------------------------------------------------------------------
# HTTP bodies
# ---------------------------------------------------------------------------

class RirSynthResponse(BaseModel):
    """Summary of a synthesized impulse response"""
    num_taps: int = Field(..., description="Length of the impulse response in samples")
    sample_rate: int
    direct_delay_samples: int = Field(..., description="Index of the direct-path tap")
    measured_t60: Optional[float] = Field(None, description="Schroeder T60 estimate in seconds")
    t60_target: float


class HealthResponse(BaseModel):
    """Service status"""
    status: str
    service: str
    checkpoint_dir: str
    checkpoints: int
