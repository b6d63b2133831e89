import os
from pathlib import Path
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict

ROOT_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """
    Настройки приложения
    """

    model_config = SettingsConfigDict(
        env_file=f"{str(ROOT_DIR) + os.sep}.env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    LOG_CONFIG_PATH: str = f"{str(ROOT_DIR) + os.sep}logging.yaml"
    DEFAULT_IMAGE_SIZE: int = 32
    GEN_WORKERS: int = 1
    RUN_WORKERS: int = 1
    GRADCHECK_SAMPLES: int = 4
    GRADCHECK_TOLERANCE: float = 1e-4
    TENSOR_DTYPE: Literal["float64", "float32"] = "float64"
    TESTING: bool = False

    @property
    def LOG_CONFIG(self) -> Path:
        return Path(self.LOG_CONFIG_PATH)


settings = Settings()
