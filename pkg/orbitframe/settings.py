"""
Runtime configuration for orbitframe.

Tolerances and runtime options are read from the environment (and a local `.env`
file) with pydantic-settings; the CLI overrides individual values per run.
"""

from typing import Optional, Tuple

from dotenv import load_dotenv
from pydantic import Field, PositiveFloat, PositiveInt
from pydantic_settings import BaseSettings, SettingsConfigDict


class Tolerances(BaseSettings):
    """Numerical tolerances shared by every module."""

    model_config = SettingsConfigDict(env_prefix="ORBITFRAME_TOL_", frozen=True, extra="ignore")

    comm_tol: PositiveFloat = Field(1e-10, description="Relative bound on ||TL - LT||_F")
    inv_rel_tol: PositiveFloat = Field(1e-12, description="sigma_min(T) must exceed inv_rel_tol * ||T||")
    cyclic_tol: PositiveFloat = Field(1e-8, description="Bound on ||T^N - I|| in cyclic mode")
    parseval_tol: PositiveFloat = Field(1e-8, description="Allowed |A - 1|, |B - 1| for Parseval")
    frame_rel_threshold: PositiveFloat = Field(1e-9, description="A > threshold * B for a frame")
    rank_rel_tol: PositiveFloat = Field(1e-10, description="Singular value cutoff relative to sigma_max")
    gap_ratio: PositiveFloat = Field(10.0, description="Values within this factor of the cutoff are ambiguous")
    red_tol: PositiveFloat = Field(1e-8, description="Reducing / invariance defect bound")
    sim_tol: PositiveFloat = Field(1e-7, description="Kernel projector distance for similarity")
    intertwining_rel_tol: PositiveFloat = Field(1e-8, description="Intertwining residual relative to ||C||")
    certify_tol: PositiveFloat = Field(1e-8, description="Relative residual for connecting-map certification")
    fiber_rel_tol: PositiveFloat = Field(1e-10, description="Per-fiber SVD cutoff")
    gram_tol: PositiveFloat = Field(1e-10, description="Allowed ||Q*Q - I|| for orthonormal input bases")

    def override(self, **updates: Optional[float]) -> "Tolerances":
        """Return a copy with the non-None updates applied and re-validated."""
        values = {k: v for k, v in updates.items() if v is not None}
        if not values:
            return self
        return Tolerances(**{**self.model_dump(), **values})


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="ORBITFRAME_", extra="ignore")

    log_level: str = "INFO"
    log_json: bool = True
    log_file: Optional[str] = None
    output_dir: str = "out"
    max_dim: PositiveInt = 2 ** 16


_dotenv_loaded = False


def load_settings(**tolerance_overrides: Optional[float]) -> Tuple[Tolerances, RuntimeSettings]:
    """
    Load tolerances and runtime settings from the environment.

    Args:
        **tolerance_overrides: Per-run tolerance values (None entries are ignored)

    Returns:
        (Tolerances, RuntimeSettings)
    """
    global _dotenv_loaded
    if not _dotenv_loaded:
        load_dotenv()
        _dotenv_loaded = True
    return Tolerances().override(**tolerance_overrides), RuntimeSettings()


def default_tolerances() -> Tolerances:
    return Tolerances()
