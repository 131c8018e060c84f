"""External point-matcher bridge for the sgam subprocess protocol."""

from .bridge import BridgeConfig, load_backend, serve

__all__ = ["BridgeConfig", "load_backend", "serve"]
