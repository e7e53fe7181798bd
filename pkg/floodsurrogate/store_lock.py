"""
Single-writer lock for a model store.

The lock is a ``.lock`` file holding the owner's PID, created with
O_EXCL. A lock whose PID is no longer alive is stale and gets reclaimed.
"""

import logging
import os
from typing import Optional

logger = logging.getLogger('floodsurrogate.store_lock')

LOCK_FILENAME = '.lock'


class StoreLockedError(ValueError):
    """Another live process holds the store lock."""

    def __init__(self, path: str, pid: Optional[int]):
        self.path = path
        self.pid = pid
        super().__init__(f"store is locked by PID {pid} ({path})")


def _read_pid(path: str) -> Optional[int]:
    """Read PID from a lock file. Returns None if not found or invalid."""
    try:
        with open(path) as f:
            return int(f.read().strip())
    except (FileNotFoundError, ValueError):
        return None


def _is_process_running(pid: int) -> bool:
    """Check if a process with the given PID is alive."""
    try:
        os.kill(pid, 0)
        return True
    except PermissionError:
        return True
    except (OSError, ProcessLookupError):
        return False


class StoreLock:
    """Context manager guarding a store directory against concurrent writers."""

    def __init__(self, root: str):
        self.root = root
        self.path = os.path.join(root, LOCK_FILENAME)
        self._held = False

    def acquire(self) -> None:
        os.makedirs(self.root, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            except FileExistsError:
                pid = _read_pid(self.path)
                if pid is not None and pid != os.getpid() and _is_process_running(pid):
                    raise StoreLockedError(self.path, pid)
                logger.warning(f"Reclaiming stale store lock {self.path} (PID {pid})")
                try:
                    os.unlink(self.path)
                except FileNotFoundError:
                    pass
                continue
            with os.fdopen(fd, 'w') as f:
                f.write(str(os.getpid()))
            self._held = True
            logger.debug(f"Acquired store lock {self.path}")
            return
        raise StoreLockedError(self.path, _read_pid(self.path))

    def release(self) -> None:
        if not self._held:
            return
        try:
            os.unlink(self.path)
        except OSError:
            pass
        self._held = False
        logger.debug(f"Released store lock {self.path}")

    def __enter__(self) -> 'StoreLock':
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()
