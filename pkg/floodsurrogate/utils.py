"""
Utility functions.
"""

import hashlib
import json
import logging
import os
import tempfile
from typing import Any, Iterable

import numpy as np

logger = logging.getLogger('floodsurrogate.utils')


def hash_files(root: str, relative_paths: Iterable[str]) -> str:
    """Hash a set of files under *root* in sorted path order.

    Each file contributes its relative path and its bytes, so renames
    change the digest as well as edits.
    """
    hash_obj = hashlib.sha256()
    for rel in sorted(relative_paths):
        hash_obj.update(rel.replace('\\', '/').encode('utf-8'))
        hash_obj.update(b'\0')
        with open(os.path.join(root, rel), 'rb') as f:
            while chunk := f.read(65536):
                hash_obj.update(chunk)
        hash_obj.update(b'\0')
    return hash_obj.hexdigest()


def canonical_json_hash(payload: Any) -> str:
    """sha256 of the canonical (sorted, compact) JSON encoding of *payload*."""
    encoded = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()


def atomic_write_json(path: str, payload: Any) -> None:
    """Write JSON to *path* via a temp file in the same directory and rename.

    Concurrent readers never see a partially-written file.
    """
    dir_name = os.path.dirname(os.path.abspath(path))
    os.makedirs(dir_name, exist_ok=True)
    base = os.path.basename(path)
    fd, tmp_path = tempfile.mkstemp(prefix=f"{base}.", suffix=".tmp", dir=dir_name)
    try:
        with os.fdopen(fd, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write('\n')
        os.replace(tmp_path, path)
    except Exception:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def derive_seed(global_seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from a global seed and integer keys.

    The result depends only on the inputs, never on scheduling order, so
    per-cell work seeded this way is identical at any worker count.
    """
    seq = np.random.SeedSequence([int(global_seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def format_seconds(seconds: float) -> str:
    """
    Format a duration to a short human-readable string.

    Args:
        seconds: Duration in seconds.

    Returns:
        Formatted string (e.g., "850 ms", "12.3 s", "4m 05s").
    """
    if seconds < 1.0:
        return f"{seconds * 1000:.0f} ms"
    if seconds < 60.0:
        return f"{seconds:.1f} s"
    minutes, rest = divmod(int(round(seconds)), 60)
    if minutes < 60:
        return f"{minutes}m {rest:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m"
