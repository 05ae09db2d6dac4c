import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
env_path = Path(__file__).resolve().parent.parent / '.env'
load_dotenv(env_path)

# Base paths
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = Path(os.getenv("FLASHNET_DATA_DIR") or BASE_DIR / "data")
RUNS_DIR = DATA_DIR / "runs"
CACHE_DIR = DATA_DIR / "cache"

# Dataset
MNIST_DIR = Path(os.getenv("MNIST_DIR") or DATA_DIR / "mnist")
# Required by the fetch command; there is no default
MNIST_MIRROR_URL = os.getenv("MNIST_MIRROR_URL") or ""

# Runtime
LOG_LEVEL = (os.getenv("LOG_LEVEL") or "INFO").upper()
DEFAULT_WORKERS = int(os.getenv("DEFAULT_WORKERS") or "1")

# Experiment configuration files
CONFIG_DIR = BASE_DIR / "config"
DEFAULT_CONFIG_PATH = Path(os.getenv("FLASHNET_CONFIG") or CONFIG_DIR / "default.ini")
PROFILES_DIR = CONFIG_DIR / "profiles"
WORKLOADS_DIR = CONFIG_DIR / "workloads"

# Create directories if they don't exist
for dir_path in [RUNS_DIR, CACHE_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)
