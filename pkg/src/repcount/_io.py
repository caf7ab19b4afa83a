import os
import tempfile
from contextlib import contextmanager


@contextmanager
def atomic_open(path, mode="wb"):
    """Open a temp file next to ``path``; rename over ``path`` only on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        encoding = None if "b" in mode else "utf-8"
        newline = None if "b" in mode else ""
        with os.fdopen(fd, mode, encoding=encoding, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_bytes(path, payload: bytes):
    with atomic_open(path, "wb") as fh:
        fh.write(payload)


def atomic_write_text(path, text: str):
    with atomic_open(path, "w") as fh:
        fh.write(text)
