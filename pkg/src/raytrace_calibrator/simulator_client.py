"""Clients for external ray-tracing engines (subprocess and HTTP)."""

import json
import queue
import shlex
import subprocess
import threading
from types import TracebackType
from typing import Any

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from raytrace_calibrator.geo import LocalPosition
from raytrace_calibrator.raytrace import TRANSMIT_POWER_DBM, PathComponent, PathList

DEFAULT_TIMEOUT_S = 30.0


class SimulatorError(RuntimeError):
    """Raised when an external simulator fails, times out or answers malformed data."""


class _WirePath(BaseModel):
    model_config = ConfigDict(extra="ignore")

    delay_ns: float = Field(..., gt=0, allow_inf_nan=False)
    power_dbm: float = Field(..., le=TRANSMIT_POWER_DBM, allow_inf_nan=False)


class _WireResponse(BaseModel):
    model_config = ConfigDict(extra="ignore")

    paths: list[_WirePath]


def build_request(tx: LocalPosition, rx: LocalPosition, frequency_hz: float) -> dict[str, Any]:
    """Build the wire request body for one TX/RX pair."""
    return {
        "tx": [tx.x_m, tx.y_m, tx.z_m],
        "rx": [rx.x_m, rx.y_m, rx.z_m],
        "frequency_hz": frequency_hz,
    }


def parse_response(
    data: Any, tx: LocalPosition, rx: LocalPosition, frequency_hz: float
) -> PathList:
    """Validate a wire response and normalize it into a sorted PathList.

    Args:
        data: Decoded JSON response
        tx: Transmitter position of the request
        rx: Receiver position of the request
        frequency_hz: Request frequency

    Returns:
        PathList sorted by delay

    Raises:
        SimulatorError: Response does not match the schema or violates path invariants
    """
    try:
        response = _WireResponse.model_validate(data)
    except ValidationError as e:
        raise SimulatorError(f"Malformed simulator response: {e}") from e

    paths = [PathComponent(delay_ns=p.delay_ns, power_dbm=p.power_dbm) for p in response.paths]
    return PathList.from_unsorted(paths, tx, rx, frequency_hz)


class SubprocessForwardModel:
    """Forward model backed by a long-running simulator process.

    Speaks newline-delimited JSON over stdin/stdout: one request line, one
    response line, in order. Calls are serialized on a lock.
    """

    def __init__(
        self,
        command: str | list[str],
        frequency_hz: float,
        timeout_s: float = DEFAULT_TIMEOUT_S,
    ) -> None:
        """Initialize the client; the process starts on first use.

        Args:
            command: Command line (string is split shell-style)
            frequency_hz: Carrier frequency sent with every request
            timeout_s: Seconds to wait for each response line
        """
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.frequency_hz = frequency_hz
        self.timeout_s = timeout_s
        self._process: subprocess.Popen[str] | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._lock = threading.Lock()

    def __enter__(self) -> "SubprocessForwardModel":
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()

    def _start(self) -> subprocess.Popen[str]:
        try:
            process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise SimulatorError(f"Cannot start simulator {self.command!r}: {e}") from e

        # Fresh queue per process so a killed process cannot feed stale lines
        self._lines = queue.Queue()
        lines = self._lines

        def pump(stream: Any) -> None:
            for line in stream:
                lines.put(line)
            # End of stream: process exited or closed stdout
            lines.put(None)

        threading.Thread(target=pump, args=(process.stdout,), daemon=True).start()
        return process

    def trace(self, tx: LocalPosition, rx: LocalPosition) -> PathList:
        """Send one request and wait for its response line.

        Raises:
            SimulatorError: Process exit, timeout or malformed response
        """
        with self._lock:
            if self._process is None:
                self._process = self._start()
            process = self._process
            if process.poll() is not None:
                raise SimulatorError(f"Simulator exited with status {process.returncode}")

            request = json.dumps(build_request(tx, rx, self.frequency_hz))
            try:
                assert process.stdin is not None
                process.stdin.write(request + "\n")
                process.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise SimulatorError(f"Simulator is not accepting requests: {e}") from e

            try:
                line = self._lines.get(timeout=self.timeout_s)
            except queue.Empty as e:
                process.kill()
                self._process = None
                raise SimulatorError(
                    f"Simulator did not answer within {self.timeout_s:g} s"
                ) from e
            if line is None:
                status = process.wait()
                raise SimulatorError(f"Simulator exited with status {status}")

        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise SimulatorError(f"Malformed simulator response: {e.msg}") from e
        return parse_response(data, tx, rx, self.frequency_hz)

    def close(self) -> None:
        """Terminate the simulator process if running."""
        with self._lock:
            if self._process is None:
                return
            process, self._process = self._process, None
        if process.stdin is not None:
            process.stdin.close()
        try:
            process.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait()


class HttpForwardModel:
    """Forward model backed by a ray-tracing HTTP service (POST {base_url}/trace)."""

    def __init__(
        self,
        base_url: str,
        frequency_hz: float,
        timeout_s: float = DEFAULT_TIMEOUT_S,
    ) -> None:
        """Initialize HTTP client.

        Args:
            base_url: Service root URL
            frequency_hz: Carrier frequency sent with every request
            timeout_s: Request timeout in seconds
        """
        self.base_url = base_url.rstrip("/")
        self.frequency_hz = frequency_hz
        self.timeout_s = timeout_s
        self._client = httpx.Client(timeout=timeout_s)

    def trace(self, tx: LocalPosition, rx: LocalPosition) -> PathList:
        """POST one request to the service.

        Raises:
            SimulatorError: Transport failure, HTTP error status or malformed response
        """
        try:
            response = self._client.post(
                f"{self.base_url}/trace",
                headers=self._build_headers(),
                json=build_request(tx, rx, self.frequency_hz),
            )
            response.raise_for_status()
            data = response.json()
        except httpx.HTTPStatusError as e:
            raise SimulatorError(
                f"Simulator service returned {e.response.status_code}"
            ) from e
        except httpx.HTTPError as e:
            raise SimulatorError(f"Simulator service unreachable: {e}") from e
        except ValueError as e:
            raise SimulatorError(f"Malformed simulator response: {e}") from e
        return parse_response(data, tx, rx, self.frequency_hz)

    def close(self) -> None:
        self._client.close()

    def _build_headers(self) -> dict[str, str]:
        return {
            "Content-Type": "application/json",
            "Accept": "application/json",
            "User-Agent": "raytrace-calibrator",
        }


def trace_external(
    endpoint: SubprocessForwardModel, tx: LocalPosition, rx: LocalPosition
) -> PathList:
    """Trace one pair through an external simulator process.

    Args:
        endpoint: Running (or lazily started) simulator client
        tx: Transmitter position
        rx: Receiver position

    Returns:
        Validated, delay-sorted PathList
    """
    return endpoint.trace(tx, rx)
