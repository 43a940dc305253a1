from __future__ import annotations

import pytest

from faasfuse.bundles import (
    create_bundle,
    load_bundle,
    pack_function_dir,
    tree_digest,
    unpack_function_dir,
    write_manifest,
)
from faasfuse.errors import BundleError
from tests.conftest import ECHO_CODE, make_bundle, write_function


def test_create_and_load_roundtrip(tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE, "b": ECHO_CODE})
    assert bundle.manifest == ("a", "b")
    reloaded = load_bundle(bundle.root)
    assert reloaded.manifest == bundle.manifest
    assert (bundle.root / "a" / "fn.py").is_file()


def test_manifest_entry_without_directory_rejected(tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE})
    write_manifest(bundle.root, ("a", "ghost"))
    with pytest.raises(BundleError, match="ghost"):
        load_bundle(bundle.root)


def test_directory_without_manifest_entry_rejected(tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE})
    (bundle.root / "stray").mkdir()
    with pytest.raises(BundleError, match="stray"):
        load_bundle(bundle.root)


def test_duplicate_manifest_entries_rejected(tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE})
    write_manifest(bundle.root, ("a", "a"))
    with pytest.raises(BundleError, match="duplicate"):
        load_bundle(bundle.root)


def test_missing_entry_module_rejected(tmp_path):
    bundle = make_bundle(tmp_path, {"a": ECHO_CODE})
    (bundle.root / "a" / "fn.py").unlink()
    with pytest.raises(BundleError, match="fn.py"):
        load_bundle(bundle.root)


def test_invalid_function_id_in_manifest_rejected(tmp_path):
    source = tmp_path / "src"
    write_function(source, "ok")
    bundle = create_bundle(tmp_path / "bundle", {"ok": source / "ok"})
    write_manifest(bundle.root, ("bad name",))
    with pytest.raises(BundleError):
        load_bundle(bundle.root)


def test_archive_roundtrip_is_byte_identical(tmp_path):
    fdir = write_function(tmp_path / "src", "a", support={"helper.py": "X = 41\n", "data.txt": "hi"})
    archive = pack_function_dir(fdir)
    dest = tmp_path / "out"
    unpack_function_dir(archive, dest)
    assert tree_digest(fdir) == tree_digest(dest)


def test_archive_escaping_entry_rejected(tmp_path):
    import io
    import zipfile

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("fn.py", "def handler(request): return b''\n")
        zf.writestr("../evil.py", "pwned = True\n")
    with pytest.raises(BundleError, match="escapes"):
        unpack_function_dir(buf.getvalue(), tmp_path / "out")


def test_archive_without_entry_module_rejected(tmp_path):
    import io
    import zipfile

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("other.py", "pass\n")
    with pytest.raises(BundleError, match="fn.py"):
        unpack_function_dir(buf.getvalue(), tmp_path / "out")
