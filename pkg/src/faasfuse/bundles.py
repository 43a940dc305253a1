"""Function bundle layout: manifest plus one code subdirectory per function.

On disk a bundle is::

    <root>/manifest          one function id per line, deployment order
    <root>/<FunctionId>/     entry module ``fn.py`` plus arbitrary support files

The manifest and the set of subdirectories must agree exactly.
"""

from __future__ import annotations

import io
import shutil
import zipfile
from dataclasses import dataclass
from pathlib import Path

from .core import check_function_id
from .errors import BundleError

MANIFEST_NAME = "manifest"
ENTRY_MODULE = "fn.py"


@dataclass(frozen=True)
class Bundle:
    """A validated code tree. ``manifest`` preserves deployment order."""

    root: Path
    manifest: tuple[str, ...]

    @property
    def functions(self) -> frozenset[str]:
        return frozenset(self.manifest)

    def function_dir(self, name: str) -> Path:
        return self.root / name


def read_manifest(root: Path) -> tuple[str, ...]:
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise BundleError(f"missing manifest in {root}")
    names = [line.strip() for line in path.read_text("utf-8").splitlines() if line.strip()]
    return tuple(names)


def write_manifest(root: Path, names: tuple[str, ...] | list[str]) -> None:
    (root / MANIFEST_NAME).write_text("".join(f"{n}\n" for n in names), "utf-8")


def load_bundle(root: Path) -> Bundle:
    """Read and validate a bundle tree, raising BundleError on any violation."""
    root = Path(root)
    names = read_manifest(root)
    if len(set(names)) != len(names):
        raise BundleError(f"duplicate manifest entries in {root}")
    for name in names:
        try:
            check_function_id(name)
        except Exception as exc:
            raise BundleError(str(exc)) from exc
        fn_dir = root / name
        if not fn_dir.is_dir():
            raise BundleError(f"manifest entry {name!r} has no code directory")
        if not (fn_dir / ENTRY_MODULE).is_file():
            raise BundleError(f"function {name!r} lacks entry module {ENTRY_MODULE}")
    on_disk = {p.name for p in root.iterdir() if p.is_dir()}
    extra = on_disk - set(names)
    if extra:
        raise BundleError(f"directories without manifest entries: {sorted(extra)}")
    return Bundle(root=root, manifest=names)


def create_bundle(dest: Path, functions: dict[str, Path]) -> Bundle:
    """Assemble a bundle at ``dest`` from ``{function_id: source_dir}``."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    order = tuple(functions)
    for name, source in functions.items():
        check_function_id(name)
        shutil.copytree(source, dest / name)
    write_manifest(dest, order)
    return load_bundle(dest)


def copy_bundle(bundle: Bundle, dest: Path) -> Bundle:
    """Byte-identical copy of a bundle tree into ``dest``."""
    dest = Path(dest)
    shutil.copytree(bundle.root, dest, dirs_exist_ok=False)
    return load_bundle(dest)


def pack_function_dir(source: Path) -> bytes:
    """Zip one function directory (the deploy-API request body)."""
    buf = io.BytesIO()
    source = Path(source)
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for path in sorted(source.rglob("*")):
            if path.is_file():
                zf.write(path, path.relative_to(source).as_posix())
    return buf.getvalue()


def unpack_function_dir(archive: bytes, dest: Path) -> None:
    """Extract a deploy archive, refusing entries that escape ``dest``."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    try:
        zf = zipfile.ZipFile(io.BytesIO(archive))
    except zipfile.BadZipFile as exc:
        raise BundleError(f"bad function archive: {exc}") from exc
    with zf:
        for info in zf.infolist():
            target = dest / info.filename
            resolved = target.resolve()
            if not resolved.is_relative_to(dest.resolve()):
                raise BundleError(f"archive entry escapes bundle: {info.filename}")
            if info.is_dir():
                resolved.mkdir(parents=True, exist_ok=True)
            else:
                resolved.parent.mkdir(parents=True, exist_ok=True)
                resolved.write_bytes(zf.read(info))
    if not (dest / ENTRY_MODULE).is_file():
        raise BundleError(f"function archive lacks entry module {ENTRY_MODULE}")


def tree_digest(root: Path) -> dict[str, str]:
    """Relative-path -> sha256 map; used by byte-identity checks."""
    import hashlib

    digests = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digests[path.relative_to(root).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
    return digests
