"""Denoiser adapter contract and backend discovery.

A backend bundles the text stack (tokenizer and embedder), the identity
projector, the noise predictor, and the latent codec behind one interface
so the run engine never touches model internals. The built-in analytic
backend is registered under ``analytic``; adapters for real models are
loaded from a plug-in module named by the ``FREECURE_BACKEND_PATH``
environment variable and addressed as ``external:<id>``.
"""
from __future__ import annotations

import importlib.util
import os
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError

ENV_BACKEND_PATH = "FREECURE_BACKEND_PATH"


@dataclass(frozen=True)
class BackendCapabilities:
    """What a backend can do, declared up front.

    ``latent_shape`` is channels-first. Tokenizers must map each
    whitespace-separated word to exactly one id and prepend a start token,
    so token position ``j >= 1`` corresponds to word ``j - 1``.
    """

    latent_shape: tuple[int, int, int]
    embedding_dim: int
    token_limit: int
    supports_attention_capture: bool


class BackendAdapter(ABC):
    """Interface every denoising backend implements."""

    @property
    @abstractmethod
    def capabilities(self) -> BackendCapabilities: ...

    @property
    @abstractmethod
    def placeholder_token_id(self) -> int: ...

    @abstractmethod
    def tokenize(self, text: str) -> list[int]: ...

    @abstractmethod
    def embed_tokens(self, token_ids) -> np.ndarray: ...

    @abstractmethod
    def embed_identity(self, image: np.ndarray) -> np.ndarray:
        """Project a reference image to one text-embedding row."""

    @abstractmethod
    def null_conditioning(self):
        """Unconditional bundle used for classifier-free guidance."""

    @abstractmethod
    def predict_noise(self, state, cond, sched, capture=None) -> np.ndarray:
        """Predict the noise component of ``state`` under ``cond``.

        ``capture`` is an optional attention capture session; backends that
        do not support capture must raise a capability error when given one.
        """

    @abstractmethod
    def render_target(self, cond) -> np.ndarray:
        """Deterministic image the conditioning converges to."""

    @abstractmethod
    def decode_latent(self, z0: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def encode_image(self, image: np.ndarray) -> np.ndarray: ...


_REGISTRY: dict = {}
_PARSERS: dict = {}


def register_backend(name: str, factory) -> None:
    _REGISTRY[name] = factory


def register_parser(name: str, factory) -> None:
    """Associate a face parser factory with a backend name."""
    _PARSERS[name] = factory


def _ensure_builtins() -> None:
    # Importing the module registers the built-in adapters as a side effect.
    from . import analytic  # noqa: F401


def _external_module(backend_id: str):
    path = os.environ.get(ENV_BACKEND_PATH)
    if not path:
        raise CapabilityError(
            f"backend 'external:{backend_id}' requested but {ENV_BACKEND_PATH} is not set"
        )
    if not os.path.exists(path):
        raise CapabilityError(f"{ENV_BACKEND_PATH} points at a missing file: {path}")
    name = "freecure_external_backend"
    cached = sys.modules.get(name)
    if cached is not None and getattr(cached, "__file__", None) == os.path.abspath(path):
        return cached
    spec = importlib.util.spec_from_file_location(name, os.path.abspath(path))
    if spec is None or spec.loader is None:
        raise CapabilityError(f"cannot load backend module from {path}")
    module = importlib.util.module_from_spec(spec)
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


def _load_external(backend_id: str) -> BackendAdapter:
    module = _external_module(backend_id)
    if not hasattr(module, "create_backend"):
        raise CapabilityError(
            f"{module.__file__} does not define create_backend(backend_id)"
        )
    adapter = module.create_backend(backend_id)
    if not isinstance(adapter, BackendAdapter):
        raise CapabilityError(
            f"{module.__file__}: create_backend({backend_id!r}) did not return a BackendAdapter"
        )
    return adapter


def get_backend(name: str) -> BackendAdapter:
    """Resolve a manifest backend field to an adapter instance."""
    if name not in _REGISTRY and not name.startswith("external:"):
        _ensure_builtins()
    if name in _REGISTRY:
        return _REGISTRY[name]()
    if name.startswith("external:"):
        return _load_external(name.split(":", 1)[1])
    raise CapabilityError(f"unknown backend {name!r}")


def get_parser(name: str):
    """Face parser for a backend name, or None if it has none."""
    if name not in _PARSERS and not name.startswith("external:"):
        _ensure_builtins()
    if name in _PARSERS:
        return _PARSERS[name]()
    if name.startswith("external:"):
        module = _external_module(name.split(":", 1)[1])
        if hasattr(module, "create_parser"):
            return module.create_parser(name.split(":", 1)[1])
        return None
    return None
