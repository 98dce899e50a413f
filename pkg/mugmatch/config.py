"""Environment-backed configuration for mugmatch."""

import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError, InvalidParams
from .models import ALRParams, PyramidParams

# Load environment variables
load_dotenv()

PRESETS = ("none", "mild", "moderate", "heavy")


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}") from None


def _env_int(name: str, default: int | None) -> int | None:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


class RunParams(BaseModel):
    """Extraction and verification parameters read from a JSON file."""

    model_config = ConfigDict(extra="forbid")

    pyramid: PyramidParams = Field(default_factory=PyramidParams)
    alr: ALRParams = Field(default_factory=ALRParams)


def load_run_params(path: Path) -> RunParams:
    """
    Read a parameters file such as {"pyramid": {"contrast_threshold": 0.04}, "alr": {"angle_bins": 36}}.

    Omitted sections and fields keep their defaults.

    Raises:
        ConfigError: If the file cannot be read
        InvalidParams: If a value violates its constraints or a key is unknown
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read parameters file {path}: {e.strerror or e}") from e
    try:
        return RunParams.model_validate_json(text)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'file'}: {err['msg']}" for err in e.errors())
        raise InvalidParams(f"{path}: {problems}") from None


class Settings(BaseModel):
    """Defaults read from the environment (and a local .env file)."""

    gallery_dir: Path = Field(default=Path(".mugmatch_gallery"), description="Gallery directory")
    ratio: float = Field(default=0.8, description="Ratio-test fraction")
    eigen_k: int | None = Field(default=None, description="Eigenfaces to keep, None for min(N-1, 40)")
    preset: str = Field(default="moderate", description="Default manipulation preset")
    canonical_size: int = Field(default=300, description="Side of the square canonical face")
    params_file: Path | None = Field(default=None, description="JSON file with pyramid/alr parameters")

    @classmethod
    def from_env(cls) -> "Settings":
        """Build settings from MUGMATCH_* environment variables."""
        preset = os.getenv("MUGMATCH_PRESET", "moderate")
        if preset not in PRESETS:
            raise ConfigError(f"MUGMATCH_PRESET must be one of {', '.join(PRESETS)}, got {preset!r}")
        canonical_size = _env_int("MUGMATCH_CANONICAL_SIZE", 300)
        if canonical_size is None or canonical_size < 16:
            raise ConfigError("MUGMATCH_CANONICAL_SIZE must be at least 16")
        return cls(
            gallery_dir=Path(os.getenv("MUGMATCH_GALLERY", ".mugmatch_gallery")),
            ratio=_env_float("MUGMATCH_RATIO", 0.8),
            eigen_k=_env_int("MUGMATCH_EIGEN_K", None),
            preset=preset,
            canonical_size=canonical_size,
            params_file=Path(os.environ["MUGMATCH_PARAMS"]) if os.getenv("MUGMATCH_PARAMS") else None,
        )


class CliConfig(BaseModel):
    """Resolved configuration for one CLI invocation."""

    gallery_dir: Path
    ratio: float = Field(default=0.8)
    eigen_k: int | None = Field(default=None)
    pyramid: PyramidParams = Field(default_factory=PyramidParams)
    alr: ALRParams = Field(default_factory=ALRParams)
    params_file: Path | None = Field(default=None, description="Source of pyramid/alr, None for defaults")
    preset: str = Field(default="moderate")
    output_format: str = Field(default="text")

    @field_validator("ratio")
    @classmethod
    def _check_ratio(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ConfigError(f"ratio must lie in (0, 1], got {value}")
        return value

    @field_validator("eigen_k")
    @classmethod
    def _check_eigen_k(cls, value: int | None) -> int | None:
        if value is not None and value < 1:
            raise ConfigError(f"eigen-k must be at least 1, got {value}")
        return value

    @field_validator("preset")
    @classmethod
    def _check_preset(cls, value: str) -> str:
        if value not in PRESETS:
            raise ConfigError(f"preset must be one of {', '.join(PRESETS)}")
        return value

    @field_validator("output_format")
    @classmethod
    def _check_format(cls, value: str) -> str:
        if value not in ("text", "csv"):
            raise ConfigError("format must be text or csv")
        return value

    @classmethod
    def resolve(
        cls,
        settings: Settings,
        gallery_dir: Path | None = None,
        ratio: float | None = None,
        eigen_k: int | None = None,
        preset: str | None = None,
        output_format: str = "text",
        params_file: Path | None = None,
    ) -> "CliConfig":
        """Combine environment defaults with explicit flags (flags win)."""
        params_file = params_file or settings.params_file
        run = load_run_params(params_file) if params_file is not None else RunParams()
        return cls(
            gallery_dir=gallery_dir or settings.gallery_dir,
            ratio=ratio if ratio is not None else settings.ratio,
            eigen_k=eigen_k if eigen_k is not None else settings.eigen_k,
            preset=preset or settings.preset,
            output_format=output_format,
            pyramid=run.pyramid,
            alr=run.alr,
            params_file=params_file,
        )
