"""Client for external promptable segmenters speaking the stdio protocol.

The peer is a child process exchanging newline-delimited JSON:
hello/hello_ack (version check), set_image/image_ack (base64 row-major
little-endian float32 pixels), predict/probs, and error for any failure.
One request is in flight per connection at a time.
"""
from __future__ import annotations

import base64
import hashlib
import json
import queue
import shlex
import subprocess
import threading

import numpy as np

from ..core.types import Image2D, PromptSet
from ..errors import BridgeError
from .core import EnsembleConfig, ProbabilityMap, SegmenterConfig, _jittered_members

PROTOCOL_VERSION = 1


def _encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode_f32(data: str, count: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise BridgeError(f"undecodable float payload: {exc}") from exc
    if len(raw) != 4 * count:
        raise BridgeError(f"expected {4 * count} payload bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


class BridgeClient:
    """A serial request/response channel to one bridge child process."""

    def __init__(self, command: str, timeout: float = 30.0):
        self.timeout = timeout
        self._registered: set[str] = set()
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"could not start bridge {command!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        ack = self._roundtrip({"op": "hello", "version": PROTOCOL_VERSION})
        if ack.get("op") != "hello_ack" or ack.get("version") != PROTOCOL_VERSION:
            self.close()
            raise BridgeError(f"handshake failed: {ack}")
        self.peer_name = str(ack.get("name", ""))

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _roundtrip(self, request: dict) -> dict:
        reply = self.raw_request(json.dumps(request))
        if reply.get("op") == "error":
            raise BridgeError(f"bridge error: {reply.get('message', '')}")
        return reply

    def raw_request(self, line: str) -> dict:
        """Send one raw line (not necessarily valid JSON) and return the
        peer's reply object verbatim; error replies are returned, not raised.
        Intended for protocol conformance checks."""
        if self._proc.poll() is not None:
            raise BridgeError("bridge process has exited")
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(line.rstrip("\n") + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge write failed: {exc}") from exc
        try:
            reply = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise BridgeError(f"bridge did not answer within {self.timeout}s") from None
        if reply is None:
            raise BridgeError("bridge closed its output")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"unparseable bridge reply: {reply!r}") from exc

    def register_image(self, image: Image2D) -> str:
        """Upload the pixel grid once per client; returns the image id."""
        digest = hashlib.sha1(
            np.ascontiguousarray(image.intensities, dtype="<f4").tobytes()
        ).hexdigest()[:16]
        image_id = f"img-{digest}"
        if image_id in self._registered:
            return image_id
        reply = self._roundtrip(
            {
                "op": "set_image",
                "id": image_id,
                "width": image.width,
                "height": image.height,
                "encoding": "f32le",
                "data": _encode_f32(image.intensities),
            }
        )
        if reply.get("op") != "image_ack" or reply.get("id") != image_id:
            raise BridgeError(f"unexpected set_image reply: {reply}")
        self._registered.add(image_id)
        return image_id

    def predict(
        self,
        image: Image2D,
        prompts: PromptSet,
        stochastic: bool = False,
        member_seed: int = 0,
    ) -> ProbabilityMap:
        image_id = self.register_image(image)
        reply = self._roundtrip(
            {
                "op": "predict",
                "image_id": image_id,
                "prompts": [{"x": p.x, "y": p.y, "polarity": p.polarity.value} for p in prompts],
                "stochastic": bool(stochastic),
                "member_seed": int(member_seed),
            }
        )
        if reply.get("op") != "probs" or reply.get("image_id") != image_id:
            raise BridgeError(f"unexpected predict reply: {reply}")
        values = _decode_f32(str(reply.get("data", "")), image.width * image.height)
        if values.min() < -1e-6 or values.max() > 1.0 + 1e-6:
            raise BridgeError("bridge returned probabilities outside [0, 1]")
        grid = np.clip(values, 0.0, 1.0).reshape(image.height, image.width)
        return ProbabilityMap(grid)

    def close(self):
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5.0)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc):
        self.close()


def predict_via_bridge(image: Image2D, prompts: PromptSet, cfg: SegmenterConfig) -> ProbabilityMap:
    """One-shot predict through a short-lived bridge connection."""
    with BridgeClient(cfg.bridge_endpoint) as client:
        return client.predict(image, prompts)


def ensemble_via_bridge(
    image: Image2D,
    prompts: PromptSet,
    cfg: SegmenterConfig,
    ens: EnsembleConfig,
    stochastic: bool,
) -> list[ProbabilityMap]:
    """Ensemble via one connection: client-side prompt jitter plus the
    peer's own stochasticity seeded per member."""
    with BridgeClient(cfg.bridge_endpoint) as client:
        maps = []
        for k, (_tol, member_prompts) in enumerate(_jittered_members(image, prompts, cfg, ens)):
            member_seed = ens.jitter_seed * 1000 + k
            maps.append(client.predict(image, member_prompts, stochastic, member_seed))
        return maps
