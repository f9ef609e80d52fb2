from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Runtime
    THREADS: int = 4  # upper bound for worker threads (PGSPOT_THREADS)
    LOG_LEVEL: str = "INFO"

    # Map geometry
    MAP_SCALE: int = 4  # input pixels per map cell
    NUM_CLASSES: int = 37

    # Label generation
    TCL_HEIGHT_SHRINK: float = 0.3
    TCL_END_SHRINK: float = 0.15
    SAMPLE_STEP: float = 1.0
    MIN_SAMPLE_STEP: float = 0.25

    # Post-processing
    TCL_THRESHOLD: float = 0.5
    MIN_AREA: int = 4
    EXPAND_RATIO: float = 0.15  # matches TCL_END_SHRINK
    MAX_VERTICES: int = 14

    # Graph refinement
    GRM_MAX_LEN: int = 64
    GRM_WINDOW_OVERLAP: int = 8

    model_config = SettingsConfigDict(env_prefix="PGSPOT_", env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()
