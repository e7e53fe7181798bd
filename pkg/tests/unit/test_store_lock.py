"""
Tests for the model store writer lock.
"""

import os

import pytest

from floodsurrogate.store_lock import StoreLock, StoreLockedError


class TestStoreLock:

    def test_acquire_writes_pid_and_release_removes(self, tmp_path):
        lock = StoreLock(str(tmp_path / 'store'))
        with lock:
            assert (tmp_path / 'store' / '.lock').read_text() == str(os.getpid())
        assert not (tmp_path / 'store' / '.lock').exists()

    def test_live_owner_blocks(self, tmp_path):
        (tmp_path / '.lock').write_text(str(os.getppid()))
        with pytest.raises(StoreLockedError) as exc_info:
            StoreLock(str(tmp_path)).acquire()
        assert exc_info.value.pid == os.getppid()
        assert isinstance(exc_info.value, ValueError)

    def test_stale_lock_reclaimed(self, tmp_path):
        (tmp_path / '.lock').write_text('99999999')
        with StoreLock(str(tmp_path)):
            assert (tmp_path / '.lock').read_text() == str(os.getpid())

    def test_garbage_lock_reclaimed(self, tmp_path):
        (tmp_path / '.lock').write_text('not-a-pid')
        with StoreLock(str(tmp_path)):
            pass
        assert not (tmp_path / '.lock').exists()

    def test_release_without_acquire_is_noop(self, tmp_path):
        (tmp_path / '.lock').write_text(str(os.getppid()))
        StoreLock(str(tmp_path)).release()
        assert (tmp_path / '.lock').exists()
