"""Stdio adapter that serves point matches over line-delimited JSON.

One process, one backend, one in-flight request. The client sends a hello
handshake and then match requests referencing PNG crops on disk; every
request gets exactly one reply carrying the echoed id. Malformed input
produces an error reply and the loop continues, so a confused client can
never wedge the process.

Protocol:
    -> {"type": "hello", "version": 1}
    <- {"type": "hello", "version": 1, "name": <backend>}
    -> {"type": "match", "id": n, "image0": path, "image1": path,
        "max_matches": m}
    <- {"type": "matches", "id": n, "matches": [[x0, y0, x1, y1], ...],
        "confidences": [...]?}
    <- {"type": "error", "id": n, "message": str}

Coordinates are crop-local; the client owns the mapping back to original
image pixels. Backends load lazily, so the built-in ones import nothing
beyond the standard library.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class BridgeConfig:
    backend: str = "mock"
    sidecar: str | None = None   # mock backend: file with canned matches
    model: str | None = None     # real backends: weights path
    device: str = "cpu"
    max_matches: int = 1000
    grid_step: int = 16


class BackendError(Exception):
    """Raised by a backend for a per-request failure (reported, not fatal)."""


def _png_size(path: str) -> tuple[int, int]:
    """Width/height from a PNG header without any imaging dependency."""
    with open(path, "rb") as fh:
        header = fh.read(26)
    if len(header) < 26 or header[:8] != b"\x89PNG\r\n\x1a\n" or header[12:16] != b"IHDR":
        raise BackendError(f"{path}: not a PNG file")
    width, height = struct.unpack(">II", header[16:24])
    return int(width), int(height)


class MockBackend:
    """Replays matches from a sidecar JSON file, bit-exact.

    Sidecar schema: {"matches": [[x0, y0, x1, y1], ...],
                     "confidences": [...] (optional)}
    """

    name = "mock"

    def __init__(self, config: BridgeConfig):
        if not config.sidecar:
            raise ValueError("the mock backend needs --sidecar")
        payload = json.loads(Path(config.sidecar).read_text())
        self.matches = payload["matches"]
        self.confidences = payload.get("confidences")
        if self.confidences is not None and len(self.confidences) != len(self.matches):
            raise ValueError("sidecar confidences do not match the match count")

    def match(self, image0: str, image1: str, max_matches: int):
        for path in (image0, image1):
            if not Path(path).is_file():
                raise BackendError(f"image not found: {path}")
        matches = self.matches[:max_matches]
        confidences = None if self.confidences is None else self.confidences[: len(matches)]
        return matches, confidences


class GridBackend:
    """Identity matches on a regular pixel grid of the first crop.

    Useful as a smoke backend for pipeline plumbing: it asserts nothing
    about the images beyond their size.
    """

    name = "grid"

    def __init__(self, config: BridgeConfig):
        self.step = max(2, config.grid_step)

    def match(self, image0: str, image1: str, max_matches: int):
        w0, h0 = _png_size(image0)
        w1, h1 = _png_size(image1)
        matches = []
        for y in range(self.step // 2, h0, self.step):
            for x in range(self.step // 2, w0, self.step):
                if x < w1 and y < h1:
                    matches.append([float(x), float(y), float(x), float(y)])
                if len(matches) >= max_matches:
                    return matches, None
        return matches, None


_BACKENDS = {"mock": MockBackend, "grid": GridBackend}


def load_backend(config: BridgeConfig):
    try:
        factory = _BACKENDS[config.backend]
    except KeyError:
        raise ValueError(
            f"unknown backend {config.backend!r}; available: {sorted(_BACKENDS)}"
        ) from None
    return factory(config)


def _reply(out, payload: dict) -> None:
    out.write(json.dumps(payload) + "\n")
    out.flush()


def _handle_match(backend, config: BridgeConfig, request: dict) -> dict:
    rid = request.get("id")
    if not isinstance(rid, int):
        return {"type": "error", "id": None, "message": "match request without integer id"}
    image0 = request.get("image0")
    image1 = request.get("image1")
    if not isinstance(image0, str) or not isinstance(image1, str):
        return {"type": "error", "id": rid, "message": "match request needs image0 and image1"}
    cap = request.get("max_matches", config.max_matches)
    if not isinstance(cap, int) or cap < 0:
        return {"type": "error", "id": rid, "message": f"bad max_matches: {cap!r}"}
    cap = min(cap, config.max_matches)
    try:
        matches, confidences = backend.match(image0, image1, cap)
    except BackendError as e:
        return {"type": "error", "id": rid, "message": str(e)}
    except Exception as e:  # backend bug: report and keep serving
        return {"type": "error", "id": rid, "message": f"backend failure: {e}"}
    reply = {"type": "matches", "id": rid, "matches": matches}
    if confidences is not None:
        reply["confidences"] = confidences
    return reply


def serve(config: BridgeConfig, stdin=None, stdout=None) -> int:
    """Request loop; returns only when stdin closes."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    backend = load_backend(config)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            _reply(stdout, {"type": "error", "id": None, "message": "request is not JSON"})
            continue
        if not isinstance(request, dict):
            _reply(stdout, {"type": "error", "id": None, "message": "request is not an object"})
            continue
        kind = request.get("type")
        if kind == "hello":
            if request.get("version") != PROTOCOL_VERSION:
                _reply(
                    stdout,
                    {"type": "error", "id": None,
                     "message": f"unsupported protocol version {request.get('version')!r}"},
                )
                continue
            _reply(stdout, {"type": "hello", "version": PROTOCOL_VERSION, "name": backend.name})
        elif kind == "match":
            _reply(stdout, _handle_match(backend, config, request))
        else:
            _reply(
                stdout,
                {"type": "error", "id": request.get("id") if isinstance(request.get("id"), int) else None,
                 "message": f"unknown request type {kind!r}"},
            )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pm-bridge", description=__doc__.splitlines()[0])
    parser.add_argument("--backend", default="mock", help="mock | grid")
    parser.add_argument("--sidecar", help="mock backend: JSON file with canned matches")
    parser.add_argument("--model", help="weights path for model-based backends")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-matches", type=int, default=1000)
    parser.add_argument("--grid-step", type=int, default=16)
    args = parser.parse_args(argv)
    config = BridgeConfig(
        backend=args.backend,
        sidecar=args.sidecar,
        model=args.model,
        device=args.device,
        max_matches=args.max_matches,
        grid_step=args.grid_step,
    )
    try:
        return serve(config)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
