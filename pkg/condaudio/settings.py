# settings.py - process-wide settings read from the environment.
# A .env file in the working directory is honoured. Override via environment variables as needed.
from os import getenv

from dotenv import load_dotenv

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = getenv(name, "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        return default


# Worker cap for per-clip extraction (joblib). Values below 1 mean serial.
THREADS = max(1, _int_env("CONDAUDIO_THREADS", 1))

# Level name for logging.basicConfig in the CLI entry point.
LOG_LEVEL = getenv("CONDAUDIO_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s: %(levelname)s: %(message)s"
