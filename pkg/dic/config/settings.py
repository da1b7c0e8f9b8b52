from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "runs"
    WARN_STEP_GFLOPS: float = 50.0
    PREFETCH_BATCHES: int = 4
    SAMPLE_CONCURRENCY: int = 8
    BENCH_REPEATS: int = 5
    CHECKPOINT_RETRIES: int = 3

    model_config = SettingsConfigDict(env_prefix="DIC_", env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()
