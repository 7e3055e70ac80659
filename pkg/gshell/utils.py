import hashlib
import logging
import os
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# -------------------------
# LOGGING
# -------------------------
def configure_logging(level: str | int = "WARNING") -> None:
    """Install one stream handler on the package logger (idempotent)."""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    root = logging.getLogger("gshell")
    root.setLevel(level)
    if not any(getattr(h, "_gshell", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._gshell = True
        root.addHandler(handler)


# -------------------------
# REPO ROOT / BUNDLED CONFIGS
# -------------------------
CURRENT_FILE = Path(__file__).resolve()


def find_repo_root(start_path: Path) -> Path:
    for parent in [start_path] + list(start_path.parents):
        if (parent / "Configs").exists():
            return parent
    return start_path.parent


REPO_ROOT = find_repo_root(CURRENT_FILE)
CONFIG_DIR = REPO_ROOT / "Configs"


# -------------------------
# FILE HELPERS
# -------------------------
def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temp file next to `path`, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.remove(tmp)
        except OSError:
            pass
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -------------------------
# RANDOMNESS
# -------------------------
def stage_rng(seed: int, stage_name: str, index: int = 0) -> np.random.Generator:
    """Named seed split: the same (seed, stage name, position) always gives the same stream."""
    key = (zlib.crc32(stage_name.encode("utf-8")), int(index))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


# -------------------------
# PARALLELISM
# -------------------------
def default_threads() -> int:
    try:
        return max(1, int(os.getenv("GSHELL_THREADS", "1")))
    except ValueError:
        return 1


def chunk_ranges(n: int, threads: int, min_chunk: int = 4096) -> list[tuple[int, int]]:
    if n == 0:
        return []
    parts = max(1, min(threads * 4, -(-n // min_chunk)))
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def parallel_map(fn, items, threads: int = 1) -> list:
    """Ordered map; results come back in input order whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
