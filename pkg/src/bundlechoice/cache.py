"""
Caching module for bundlechoice.

Stores finished Monte Carlo replications on disk so that an interrupted or
repeated run skips work it has already done. Entries are keyed by the MD5 of
the canonical JSON of everything that determines a replication.
"""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

CACHE_FILENAME = ".replication_cache.json"


def replication_key(settings: Dict[str, Any]) -> str:
    """MD5 of the canonical JSON of the replication settings."""
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(canonical.encode("utf-8")).hexdigest()


def _get_cache_path(cache_dir: Path) -> Path:
    """Get the path to the cache file."""
    return cache_dir / CACHE_FILENAME


def load_cache(cache_dir: Path) -> Dict[str, dict]:
    """
    Load the replication cache from disk.

    Args:
        cache_dir: Directory containing the cache file

    Returns:
        Dictionary mapping replication keys to cached records
    """
    cache_path = _get_cache_path(cache_dir)

    if not cache_path.exists():
        logger.debug("No cache file found, starting fresh")
        return {}

    try:
        with open(cache_path, "r", encoding="utf-8") as f:
            cache = json.load(f)
        logger.info(f"Loaded {len(cache)} cached replications from {cache_path}")
        return cache
    except Exception as e:
        logger.warning(f"Failed to load cache: {e}")
        return {}


def save_cache(cache_dir: Path, cache: Dict[str, dict]) -> None:
    """Save the replication cache to disk; failures are logged, not raised."""
    cache_path = _get_cache_path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    try:
        with open(cache_path, "w", encoding="utf-8") as f:
            json.dump(cache, f, indent=2, sort_keys=True)
        logger.info(f"Saved {len(cache)} replications to cache")
    except Exception as e:
        logger.warning(f"Failed to save cache: {e}")


def get_cached_replication(cache: Dict[str, dict], key: str) -> Optional[dict]:
    """
    Cached replication record for a key.

    Returns:
        The stored record without bookkeeping fields, or None on a miss
    """
    cached = cache.get(key)
    if cached is None:
        return None
    if "record" not in cached:
        logger.debug(f"Discarding malformed cache entry {key}")
        return None
    logger.debug(f"Cache hit: {key}")
    return cached["record"]


def cache_replication(cache: Dict[str, dict], key: str, record: dict) -> None:
    """Add or update a replication record."""
    cache[key] = {"record": record, "cached_at": datetime.now().isoformat()}


def clear_cache(cache_dir: Path) -> bool:
    """
    Clear the replication cache.

    Args:
        cache_dir: Directory containing the cache file

    Returns:
        True if cache was cleared, False if no cache existed
    """
    cache_path = _get_cache_path(cache_dir)

    if cache_path.exists():
        cache_path.unlink()
        logger.info("Cache cleared")
        return True
    return False
