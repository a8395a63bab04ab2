"""Line-delimited JSON protocol for external model backends.

A backend is any program that reads one JSON object per line on stdin and
writes exactly one JSON object per line on stdout in response.  The same
transport serves NER, question generation, and reader backends; each caller
owns its request/response schema and validates the payload itself.
"""

from __future__ import annotations

import json
import subprocess
from typing import Sequence

from .errors import ProtocolError

_SNIPPET_LEN = 200


def _snippet(line: str) -> str:
    line = line.rstrip("\n")
    if len(line) > _SNIPPET_LEN:
        return line[:_SNIPPET_LEN] + "..."
    return line


class LineJsonBackend:
    """One external process, one blocking request/response at a time.

    The process is spawned lazily on the first request and kept alive
    across requests.  Use as a context manager or call close().
    """

    def __init__(self, argv: Sequence[str], cwd: str | None = None, env: dict | None = None):
        if not argv:
            raise ValueError("backend argv must not be empty")
        self.argv = list(argv)
        self.cwd = cwd
        self.env = env
        self._proc: subprocess.Popen | None = None

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                cwd=self.cwd,
                env=self.env,
                text=True,
                bufsize=1,
            )
        return self._proc

    def request(self, payload: dict) -> dict:
        proc = self._ensure_started()
        line = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
            response = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"backend {self.argv[0]} pipe failed: {exc}") from exc
        if response == "":
            code = proc.poll()
            raise ProtocolError(
                f"backend {self.argv[0]} closed its output"
                + (f" (exit code {code})" if code is not None else "")
            )
        try:
            obj = json.loads(response)
        except json.JSONDecodeError as exc:
            raise ProtocolError(
                f"backend {self.argv[0]} sent malformed JSON: {exc.msg}",
                line=_snippet(response),
            ) from exc
        if not isinstance(obj, dict):
            raise ProtocolError(
                f"backend {self.argv[0]} sent a {type(obj).__name__}, expected an object",
                line=_snippet(response),
            )
        return obj

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin is not None:
                proc.stdin.close()
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        except OSError:
            pass

    def __enter__(self) -> "LineJsonBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
