from pydantic_settings import BaseSettings
from pathlib import Path
import os

# Project root: five levels up from this file
PROJECT_ROOT = Path(__file__).parent.parent.parent.parent.parent
ENV_FILE = PROJECT_ROOT / ".env"

class Settings(BaseSettings):
    """Application settings loaded from environment variables"""

    # Application
    APP_NAME: str = "Dense Landmark Face Fitter"
    DEBUG: bool = False
    ENVIRONMENT: str = "development"

    # Database (SQLite)
    DATABASE_URL: str = "sqlite:///./data/face_fits.db"
    DATA_DIR: str = "./data"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Fitting defaults
    DEFAULT_WORKERS: int = os.cpu_count() or 1
    DEFAULT_SEED: int = 0

    class Config:
        env_file = str(ENV_FILE)
        env_file_encoding = 'utf-8'
        case_sensitive = True

settings = Settings()
