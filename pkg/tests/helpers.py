from __future__ import annotations

import threading

from acrolocal.inference import BackendError, MockBackend, MockBehavior


class CountingBackend:
    """Wraps a backend and counts the completions it serves."""

    def __init__(self, inner, fail_ids=()):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.parallelism = getattr(inner, "parallelism", 1)
        self.fail_ids = set(fail_ids)
        self.calls: list[tuple[str | None, str]] = []
        self._lock = threading.Lock()

    def complete(self, prompt, instance_id=None):
        text = prompt if isinstance(prompt, str) else prompt.serialize()
        with self._lock:
            self.calls.append((instance_id, text))
        if instance_id in self.fail_ids:
            raise BackendError("stub failure", attempts=1)
        return self.inner.complete(prompt, instance_id=instance_id)


def mock_for(corpus, **kwargs):
    return CountingBackend(MockBackend(MockBehavior.from_corpus(corpus, **kwargs)))
