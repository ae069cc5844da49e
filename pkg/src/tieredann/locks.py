"""Reader/writer locks used by the graph and the update protocol."""
import threading
from contextlib import contextmanager


class RWLock:
    """Writer-preferring readers/writer lock."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    @contextmanager
    def read(self):
        self.acquire_read()
        try:
            yield
        finally:
            self.release_read()

    @contextmanager
    def write(self):
        self.acquire_write()
        try:
            yield
        finally:
            self.release_write()


class StripedLocks:
    """Fixed pool of RW locks; a vertex maps to stripe ``h % n``.

    Multi-vertex writers lock stripes in ascending order, which orders
    acquisitions consistently across threads.
    """

    def __init__(self, n_stripes=1024):
        self.n = n_stripes
        self._locks = [RWLock() for _ in range(n_stripes)]

    def lock_for(self, h):
        return self._locks[int(h) % self.n]

    def read(self, h):
        return self.lock_for(h).read()

    def write(self, h):
        return self.lock_for(h).write()

    @contextmanager
    def write_many(self, ids):
        stripes = sorted({int(h) % self.n for h in ids})
        taken = []
        try:
            for s in stripes:
                self._locks[s].acquire_write()
                taken.append(s)
            yield
        finally:
            for s in reversed(taken):
                self._locks[s].release_write()
