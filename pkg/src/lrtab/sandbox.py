"""Subprocess sandbox for model-written pandas snippets.

Each instance gets its own scratch directory holding table.json, the
snippet, and a runner script. The runner rebuilds `df` from table.json
(object dtype, raw strings), executes the snippet, and re-serializes df so
state persists across steps of one instance while instances stay isolated.

Containment is defense in depth, not a security boundary:

* writes through open/io.open/os.open and path-mutating os functions must
  resolve inside the scratch directory (reads are unrestricted so imports
  keep working)
* socket and subprocess entry points are replaced with raising stubs
* the child runs in its own session with rlimits on CPU, address space,
  file size, and open files; wall-clock overrun kills the process group

The wall clock covers the whole child process, interpreter startup
included, so limits under roughly a second mostly measure startup.
"""

from __future__ import annotations

import json
import math
import os
import re
import resource
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from enum import Enum

from .errors import InterpreterMissing, MalformedRecord
from .tables import Table


class SandboxStatus(str, Enum):
    OK = "ok"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    LIMIT_EXCEEDED = "limit_exceeded"


@dataclass
class SandboxLimits:
    wall_ms: int = 5000
    memory_mb: int = 2048
    max_output_kb: int = 64


@dataclass
class SandboxResult:
    status: SandboxStatus
    stdout: str
    stderr: str
    exit_code: int | None
    wall_ms: float


_RUNNER_SOURCE = '''\
import builtins
import io
import json
import os
import socket
import sys
import traceback

_SCRATCH = os.path.realpath(os.getcwd())
_REAL_OPEN = builtins.open


def _contained(path):
    try:
        text = os.fspath(path)
    except TypeError:
        return False
    if isinstance(text, bytes):
        text = text.decode(sys.getfilesystemencoding(), "replace")
    resolved = os.path.realpath(os.path.abspath(text))
    return resolved == _SCRATCH or resolved.startswith(_SCRATCH + os.sep)


def _guarded_open(file, mode="r", *args, **kwargs):
    wants_write = isinstance(mode, str) and any(c in mode for c in "wax+")
    if wants_write and not isinstance(file, int) and not _contained(file):
        raise PermissionError(
            "sandbox: write outside the scratch directory: %r" % (file,)
        )
    return _REAL_OPEN(file, mode, *args, **kwargs)


builtins.open = _guarded_open
io.open = _guarded_open

_REAL_OS_OPEN = os.open
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def _guarded_os_open(path, flags, *args, **kwargs):
    if flags & _WRITE_FLAGS and not _contained(path):
        raise PermissionError(
            "sandbox: write outside the scratch directory: %r" % (path,)
        )
    return _REAL_OS_OPEN(path, flags, *args, **kwargs)


os.open = _guarded_os_open


def _guard_path_callable(module, name, positions):
    original = getattr(module, name)

    def guarded(*args, **kwargs):
        for pos in positions:
            if pos < len(args) and not _contained(args[pos]):
                raise PermissionError(
                    "sandbox: %s outside the scratch directory: %r"
                    % (name, args[pos])
                )
        return original(*args, **kwargs)

    setattr(module, name, guarded)


for _name in ("remove", "unlink", "rmdir", "mkdir", "makedirs", "truncate"):
    _guard_path_callable(os, _name, (0,))
for _name in ("rename", "replace", "link", "symlink"):
    _guard_path_callable(os, _name, (0, 1))


def _denied(*args, **kwargs):
    raise PermissionError("sandbox: network access is disabled")


socket.socket = _denied
socket.create_connection = _denied
socket.getaddrinfo = _denied

import subprocess as _subprocess


def _no_subprocess(*args, **kwargs):
    raise PermissionError("sandbox: subprocess execution is disabled")


_subprocess.Popen = _no_subprocess
_subprocess.run = _no_subprocess
_subprocess.call = _no_subprocess
_subprocess.check_call = _no_subprocess
_subprocess.check_output = _no_subprocess
os.system = _no_subprocess
os.popen = _no_subprocess
os.execv = _no_subprocess
os.execve = _no_subprocess
os.spawnv = _no_subprocess
os.spawnve = _no_subprocess

import pandas as pd

with _REAL_OPEN(os.path.join(_SCRATCH, "table.json"), encoding="utf-8") as _fh:
    _table = json.load(_fh)
df = pd.DataFrame(_table["rows"], columns=_table["columns"], dtype=object)

with _REAL_OPEN(os.path.join(_SCRATCH, "snippet.py"), encoding="utf-8") as _fh:
    _code = _fh.read()

_namespace = {"df": df, "pd": pd, "__name__": "__main__"}
_exit = 0
try:
    exec(compile(_code, "<snippet>", "exec"), _namespace)
except BaseException:
    traceback.print_exc()
    _exit = 1

_df = _namespace.get("df")
if _exit == 0 and isinstance(_df, pd.DataFrame):
    try:
        _columns = [str(c) for c in _df.columns]
        _rows = []
        for _tup in _df.itertuples(index=False, name=None):
            _rows.append([
                "" if _v is None or (isinstance(_v, float) and _v != _v) else str(_v)
                for _v in _tup
            ])
        _tmp = os.path.join(_SCRATCH, "table.json.tmp")
        with _REAL_OPEN(_tmp, "w", encoding="utf-8") as _fh:
            json.dump({"columns": _columns, "rows": _rows}, _fh, ensure_ascii=False)
        os.replace(_tmp, os.path.join(_SCRATCH, "table.json"))
    except Exception:
        pass

sys.stdout.flush()
sys.stderr.flush()
sys.exit(_exit)
'''


class SandboxSession:
    """One instance's execution context. Not thread-safe; use per instance."""

    def __init__(
        self,
        instance_id: str,
        table: Table,
        limits: SandboxLimits,
        interpreter: str,
        work_root: str | None,
        keep_scratch: bool,
    ) -> None:
        self.instance_id = instance_id
        self.table = table
        self.limits = limits
        self.interpreter = interpreter
        self.work_root = work_root
        self.keep_scratch = keep_scratch
        self.scratch: str | None = None

    def _ensure_scratch(self) -> str:
        if self.scratch is None:
            safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", self.instance_id)[:40] or "inst"
            self.scratch = tempfile.mkdtemp(
                prefix=f"lrtab-sbx-{safe}-", dir=self.work_root
            )
            self._write_table()
            runner = os.path.join(self.scratch, "_runner.py")
            with open(runner, "w", encoding="utf-8") as fh:
                fh.write(_RUNNER_SOURCE)
        return self.scratch

    def _write_table(self) -> None:
        assert self.scratch is not None
        payload = {
            "columns": list(self.table.columns),
            "rows": [list(r) for r in self.table.rows],
        }
        with open(os.path.join(self.scratch, "table.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    def _reload_table(self) -> None:
        assert self.scratch is not None
        try:
            with open(os.path.join(self.scratch, "table.json"), encoding="utf-8") as fh:
                payload = json.load(fh)
            self.table = Table(
                title=self.table.title,
                columns=[str(c) for c in payload["columns"]],
                rows=[[str(c) for c in row] for row in payload["rows"]],
            )
        except (OSError, ValueError, KeyError, TypeError, MalformedRecord):
            pass  # keep the previous state if the child left junk behind

    def run(self, code: str) -> SandboxResult:
        scratch = self._ensure_scratch()
        with open(os.path.join(scratch, "snippet.py"), "w", encoding="utf-8") as fh:
            fh.write(code)

        wall_s = self.limits.wall_ms / 1000.0
        cpu_s = max(1, math.ceil(wall_s * 2))
        mem_bytes = self.limits.memory_mb * 1024 * 1024
        out_cap = self.limits.max_output_kb * 1024

        def apply_limits() -> None:
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_s, cpu_s + 1))
            resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
            resource.setrlimit(resource.RLIMIT_FSIZE, (out_cap * 16, out_cap * 16))
            resource.setrlimit(resource.RLIMIT_NOFILE, (256, 256))

        env = {
            "PATH": "/usr/bin:/bin",
            "HOME": scratch,
            "TMPDIR": scratch,
            "LC_ALL": "C.UTF-8",
            "LANG": "C.UTF-8",
            "PYTHONHASHSEED": "0",
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
        }

        start = time.monotonic()
        proc = subprocess.Popen(
            [self.interpreter, os.path.join(scratch, "_runner.py")],
            cwd=scratch,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
            preexec_fn=apply_limits,
        )
        timed_out = False
        try:
            out_bytes, err_bytes = proc.communicate(timeout=wall_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            out_bytes, err_bytes = proc.communicate()
        wall_ms = (time.monotonic() - start) * 1000.0

        truncated = len(out_bytes) > out_cap
        stdout = out_bytes[:out_cap].decode("utf-8", errors="replace")
        stderr = err_bytes[-out_cap:].decode("utf-8", errors="replace")

        if timed_out:
            status = SandboxStatus.TIMEOUT
        elif truncated:
            status = SandboxStatus.LIMIT_EXCEEDED
        elif proc.returncode is not None and proc.returncode < 0:
            status = SandboxStatus.LIMIT_EXCEEDED
        elif proc.returncode == 0:
            status = SandboxStatus.OK
        else:
            status = SandboxStatus.RUNTIME_ERROR

        if status is SandboxStatus.OK:
            self._reload_table()
        return SandboxResult(
            status=status,
            stdout=stdout,
            stderr=stderr,
            exit_code=proc.returncode,
            wall_ms=wall_ms,
        )

    def close(self) -> None:
        if self.scratch is not None and not self.keep_scratch:
            shutil.rmtree(self.scratch, ignore_errors=True)
        self.scratch = None

    def __enter__(self) -> "SandboxSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class SandboxFactory:
    def __init__(
        self,
        limits: SandboxLimits | None = None,
        interpreter: str | None = None,
        work_root: str | None = None,
        keep_scratch: bool = False,
    ) -> None:
        self.limits = limits or SandboxLimits()
        self.interpreter = interpreter or sys.executable
        self.work_root = work_root
        self.keep_scratch = keep_scratch
        resolved = (
            self.interpreter
            if os.path.sep in self.interpreter
            else shutil.which(self.interpreter)
        )
        if not resolved or not os.path.isfile(resolved) or not os.access(resolved, os.X_OK):
            raise InterpreterMissing(
                f"sandbox interpreter not executable: {self.interpreter!r}"
            )
        self.interpreter = resolved

    def session(self, instance_id: str, table: Table) -> SandboxSession:
        return SandboxSession(
            instance_id=instance_id,
            table=table,
            limits=self.limits,
            interpreter=self.interpreter,
            work_root=self.work_root,
            keep_scratch=self.keep_scratch,
        )
