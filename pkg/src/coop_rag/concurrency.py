"""Small concurrency primitives shared by the index and remote backends."""

from __future__ import annotations

import threading
from contextlib import contextmanager


class ReadWriteLock:
    """Classic many-readers-or-one-writer lock (writer-exclusive)."""

    def __init__(self):
        self._readers = 0
        self._readers_mutex = threading.Lock()
        self._writer_mutex = threading.Lock()

    @contextmanager
    def read(self):
        with self._readers_mutex:
            self._readers += 1
            if self._readers == 1:
                self._writer_mutex.acquire()
        try:
            yield
        finally:
            with self._readers_mutex:
                self._readers -= 1
                if self._readers == 0:
                    self._writer_mutex.release()

    @contextmanager
    def write(self):
        with self._writer_mutex:
            yield
