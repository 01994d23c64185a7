from pydantic_settings import BaseSettings
from pydantic import Field, field_validator
from functools import lru_cache
from pathlib import Path


class Settings(BaseSettings):
    # Default directory for CSV output written by the CLI
    output_dir: str = Field(default=".", alias="DCCERT_OUTPUT_DIR")

    # ==============================================
    # Equilibrium (power flow) solver
    # ==============================================
    newton_max_iter: int = Field(default=100, alias="NEWTON_MAX_ITER")
    # Residual threshold is newton_tol_scale * P_max / V0 (units of current)
    newton_tol_scale: float = Field(default=1e-10, alias="NEWTON_TOL_SCALE")
    # High-voltage classification slack, in units of V0
    classification_tol_scale: float = Field(default=1e-9, alias="CLASSIFICATION_TOL_SCALE")
    # Hessian PD test: lambda_min > pd_rel_tol * lambda_max
    pd_rel_tol: float = Field(default=1e-12, alias="PD_REL_TOL")

    # ==============================================
    # Capacitance bounds
    # ==============================================
    optimizer_grid: int = Field(default=200, alias="OPTIMIZER_GRID")
    # Bisection tolerance for p_crit, in units of P0
    pcrit_tol_scale: float = Field(default=1e-6, alias="PCRIT_TOL_SCALE")
    # Capacitance margin used by the design command
    certify_margin: float = Field(default=2.0, alias="CERTIFY_MARGIN")

    # ==============================================
    # Transient simulator
    # ==============================================
    sim_rtol: float = Field(default=1e-8, alias="SIM_RTOL")
    # atol = sim_atol_scale * V0
    sim_atol_scale: float = Field(default=1e-10, alias="SIM_ATOL_SCALE")
    # Convergence: line voltages L i_dot and R_max C v_dot below sim_converge_scale * V0 ...
    sim_converge_scale: float = Field(default=1e-7, alias="SIM_CONVERGE_SCALE")
    # ... sustained for this many accepted steps
    convergence_steps: int = Field(default=5, alias="CONVERGENCE_STEPS")
    # Final state must be within sep_tol_scale * V0 of x_sep
    sep_tol_scale: float = Field(default=1e-5, alias="SEP_TOL_SCALE")
    # Divergence guard on the state norm, in units of V0
    divergence_scale: float = Field(default=1e6, alias="DIVERGENCE_SCALE")
    # Slack for "P is nonincreasing between events"
    decay_slack: float = Field(default=1e-9, alias="DECAY_SLACK")
    # Noise floor of the decay-rate check, as a fraction of the segment's total decay
    decay_floor_scale: float = Field(default=1e-2, alias="DECAY_FLOOR_SCALE")
    fuzz_workers: int = Field(default=1, alias="FUZZ_WORKERS")

    # ==============================================
    # Logging Settings
    # ==============================================
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_json_format: bool = Field(default=False, alias="LOG_JSON_FORMAT")

    @field_validator(
        'newton_tol_scale', 'classification_tol_scale', 'pd_rel_tol',
        'pcrit_tol_scale', 'sim_rtol', 'sim_atol_scale', 'sim_converge_scale',
        'sep_tol_scale', 'divergence_scale', 'certify_margin', 'decay_floor_scale',
    )
    @classmethod
    def validate_positive(cls, v: float) -> float:
        """Tolerances and scales must be strictly positive"""
        if v <= 0:
            raise ValueError("must be strictly positive")
        return v

    @field_validator('optimizer_grid')
    @classmethod
    def validate_grid(cls, v: int) -> int:
        if v < 2:
            raise ValueError("OPTIMIZER_GRID must be at least 2")
        return v

    @field_validator('newton_max_iter', 'convergence_steps', 'fuzz_workers')
    @classmethod
    def validate_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    class Config:
        env_file = ".env"
        extra = "ignore"
        populate_by_name = True


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()


# Initialize settings on module load
settings = get_settings()
