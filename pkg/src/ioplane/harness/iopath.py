"""Couples a stage to the simulated disk the way a file system shim
couples one to a kernel: every logical transfer is cut into chunks, each
chunk is enforced first and then submitted to the disk.  Baseline runs
pass stage=None and hit the disk directly."""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..stage import Stage
from ..types import Context, RequestType
from .disk import SimDisk

DEFAULT_CHUNK = 128 * 1024


@dataclass(frozen=True)
class TransferResult:
    bytes_moved: int
    enforce_wait_ns: int
    done_ns: int


class IoPath:
    def __init__(self, disk: SimDisk, stage: Stage | None = None,
                 chunk_bytes: int = DEFAULT_CHUNK) -> None:
        if chunk_bytes <= 0:
            raise ValueError("chunk_bytes must be positive")
        self.disk = disk
        self.stage = stage
        self.chunk_bytes = chunk_bytes

    def read(self, requester, ctx: Context, size: int) -> TransferResult:
        return self._transfer(requester, replace(ctx, request_type=RequestType.READ), "read", size)

    def write(self, requester, ctx: Context, size: int) -> TransferResult:
        return self._transfer(requester, replace(ctx, request_type=RequestType.WRITE), "write", size)

    def _transfer(self, requester, ctx: Context, kind: str, size: int) -> TransferResult:
        if size <= 0:
            raise ValueError("size must be positive")
        moved = 0
        waited = 0
        done_ns = 0
        while moved < size:
            chunk = min(self.chunk_bytes, size - moved)
            chunk_ctx = replace(ctx, request_size=chunk)
            if self.stage is not None:
                result = self.stage.enforce(chunk_ctx)
                waited += result.wait_ns
                if not result.ok:
                    raise RuntimeError(f"stage refused transfer: {result.detail}")
            done_ns = self.disk.submit(requester, kind, chunk)
            moved += chunk
        return TransferResult(moved, waited, done_ns)
