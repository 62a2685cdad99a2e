"""Per-run-directory lock so concurrent runs cannot share an output dir."""

from __future__ import annotations

import contextlib
import os

from .errors import ContractError


@contextlib.contextmanager
def run_lock(run_dir):
    path = os.path.join(run_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ContractError(
            f"run directory {run_dir} is locked by another run "
            f"(remove {path} if that run is dead)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)
