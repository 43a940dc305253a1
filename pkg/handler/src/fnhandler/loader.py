"""Bundle loading: every manifest entry's handler, or nothing at all."""

from __future__ import annotations

import importlib.util
import logging
import re
import sys
import types
from pathlib import Path

from .contract import ENTRY_MODULE, MANIFEST_NAME

log = logging.getLogger(__name__)


class Request:
    """Argument handed to user handlers."""

    __slots__ = ("function", "body", "headers")

    def __init__(self, function: str, body: bytes, headers: dict[str, str] | None = None):
        self.function = function
        self.body = body
        self.headers = headers or {}


class LocalRegistry:
    """FunctionId -> handler callable; immutable once ``ready`` is true.

    Loading is all-or-nothing: a single failing entry module keeps the
    whole instance unhealthy, including the functions that did load.
    """

    def __init__(self) -> None:
        self.handlers: dict[str, object] = {}
        self.errors: dict[str, str] = {}
        self.manifest: tuple[str, ...] = ()
        self.ready = False

    def load(self, bundle_root: Path) -> "LocalRegistry":
        bundle_root = Path(bundle_root)
        manifest = bundle_root / MANIFEST_NAME
        names = [ln.strip() for ln in manifest.read_text("utf-8").splitlines() if ln.strip()]
        self.manifest = tuple(names)
        for index, name in enumerate(names):
            try:
                self.handlers[name] = self._load_one(name, bundle_root / name, index)
            except BaseException as exc:
                log.error("entry module %s failed to load: %s", name, exc)
                self.errors[name] = f"{type(exc).__name__}: {exc}"
        self.ready = not self.errors and len(self.handlers) == len(names)
        return self

    @staticmethod
    def _load_one(name: str, fn_dir: Path, index: int):
        # Each function gets a private package namespace so same-named
        # support modules in fused bundles cannot shadow each other.
        pkg_name = f"hostedfn{index}_" + re.sub(r"[^0-9a-zA-Z_]", "_", name)
        package = types.ModuleType(pkg_name)
        package.__path__ = [str(fn_dir)]
        sys.modules[pkg_name] = package
        spec = importlib.util.spec_from_file_location(f"{pkg_name}.fn", fn_dir / ENTRY_MODULE)
        module = importlib.util.module_from_spec(spec)
        sys.modules[spec.name] = module
        spec.loader.exec_module(module)
        handler = getattr(module, "handler", None)
        if not callable(handler):
            raise AttributeError(f"entry module of {name!r} exports no handler()")
        return handler
