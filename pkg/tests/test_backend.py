from __future__ import annotations

import textwrap

import pytest

from freecure.analytic import AnalyticBackend, SyntheticParser
from freecure.backend import (
    ENV_BACKEND_PATH,
    get_backend,
    get_parser,
    register_backend,
    register_parser,
)
from freecure.errors import CapabilityError

EXTERNAL_MODULE = textwrap.dedent(
    """
    from freecure.analytic import AnalyticBackend

    class EchoBackend(AnalyticBackend):
        def __init__(self, backend_id):
            super().__init__()
            self.backend_id = backend_id

    def create_backend(backend_id):
        return EchoBackend(backend_id)
    """
)


def test_builtin_backend_and_parser_resolve():
    assert isinstance(get_backend("analytic"), AnalyticBackend)
    assert isinstance(get_parser("analytic"), SyntheticParser)


def test_unknown_backend_raises():
    with pytest.raises(CapabilityError):
        get_backend("imaginary")


def test_unknown_backend_has_no_parser():
    assert get_parser("imaginary") is None


def test_registering_a_factory_makes_it_resolvable():
    marker = object()
    register_backend("stub-backend", lambda: marker)
    try:
        assert get_backend("stub-backend") is marker
    finally:
        from freecure import backend as backend_mod

        backend_mod._REGISTRY.pop("stub-backend", None)


def test_registering_a_parser_factory():
    register_parser("stub-backend", lambda: "parser")
    try:
        assert get_parser("stub-backend") == "parser"
    finally:
        from freecure import backend as backend_mod

        backend_mod._PARSERS.pop("stub-backend", None)


def test_external_backend_loads_from_env_path(tmp_path, monkeypatch):
    module_path = tmp_path / "plugin.py"
    module_path.write_text(EXTERNAL_MODULE, encoding="utf-8")
    monkeypatch.setenv(ENV_BACKEND_PATH, str(module_path))
    adapter = get_backend("external:toy")
    assert adapter.backend_id == "toy"
    assert adapter.capabilities.latent_shape == (12, 32, 32)
    # no create_parser in the module: parser degrades to None
    assert get_parser("external:toy") is None


def test_external_backend_requires_env_var(monkeypatch):
    monkeypatch.delenv(ENV_BACKEND_PATH, raising=False)
    with pytest.raises(CapabilityError) as err:
        get_backend("external:toy")
    assert ENV_BACKEND_PATH in str(err.value)


def test_external_backend_missing_file(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_BACKEND_PATH, str(tmp_path / "nope.py"))
    with pytest.raises(CapabilityError):
        get_backend("external:toy")


def test_external_module_without_factory(tmp_path, monkeypatch):
    module_path = tmp_path / "empty_plugin.py"
    module_path.write_text("VALUE = 3\n", encoding="utf-8")
    monkeypatch.setenv(ENV_BACKEND_PATH, str(module_path))
    with pytest.raises(CapabilityError):
        get_backend("external:toy")


def test_external_factory_must_return_adapter(tmp_path, monkeypatch):
    module_path = tmp_path / "bad_plugin.py"
    module_path.write_text("def create_backend(backend_id):\n    return object()\n",
                           encoding="utf-8")
    monkeypatch.setenv(ENV_BACKEND_PATH, str(module_path))
    with pytest.raises(CapabilityError):
        get_backend("external:toy")


def test_capability_fields(backend):
    caps = backend.capabilities
    assert caps.latent_shape == (12, 32, 32)
    assert caps.embedding_dim == 32
    assert caps.token_limit == 77
    assert caps.supports_attention_capture is True
