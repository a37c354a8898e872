"""Atomic file writes and the global thread cap."""

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

_THREAD_CAP = None


def set_thread_cap(n) -> None:
    """Cap worker threads for parallel stages; None restores the default."""
    global _THREAD_CAP
    _THREAD_CAP = None if n is None else max(1, int(n))


def thread_cap() -> int:
    """Explicit cap, else NEARDUP_THREADS, else the machine's cores."""
    if _THREAD_CAP is not None:
        return _THREAD_CAP
    env = os.environ.get("NEARDUP_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def map_chunks(fn, chunks):
    """Run fn over chunks, in a thread pool when the cap allows.

    Chunk boundaries are fixed by the caller, so results are identical
    whatever the cap; only wall-clock changes.
    """
    chunks = list(chunks)
    cap = thread_cap()
    if cap <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=min(cap, len(chunks))) as pool:
        return list(pool.map(fn, chunks))


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory plus rename, so readers
    never observe a partial file and failures leave the target untouched."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
