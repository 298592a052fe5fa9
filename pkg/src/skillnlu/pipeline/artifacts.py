"""Artifacts: lazily read, atomically written data handles behind a URI.

Schemes:

* ``file://<path>`` or a bare path: a local file. Relative paths resolve
  against the artifact root. A directory reads as a JSON manifest of its
  text files (read-only).
* ``kv://<namespace>/<key>``: a row in an embedded SQLite key-value store
  at ``<artifact root>/kv.sqlite``.
* ``mem://<key>``: a process-wide in-memory table, handy in tests.

The artifact root comes from ``SKILLNLU_ARTIFACT_ROOT`` and defaults to
the current directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import pickle
import sqlite3
import tempfile
import threading
import uuid
from pathlib import Path
from typing import Any

__all__ = [
    "ARTIFACT_ROOT_ENV",
    "Artifact",
    "ArtifactError",
    "artifact_root",
    "kv_artifact",
    "digest_bytes",
    "directory_manifest",
    "atomic_write",
]

ARTIFACT_ROOT_ENV = "SKILLNLU_ARTIFACT_ROOT"


class ArtifactError(RuntimeError):
    pass


def artifact_root() -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV) or os.getcwd())


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _FileBackend:
    def path(self, loc: str, root: Path) -> Path:
        p = Path(loc)
        return p if p.is_absolute() else root / p

    def exists(self, loc, root):
        p = self.path(loc, root)
        return p.is_file() or p.is_dir()

    def read(self, loc, root) -> bytes:
        p = self.path(loc, root)
        if p.is_dir():
            return directory_manifest(p)
        try:
            return p.read_bytes()
        except FileNotFoundError:
            raise ArtifactError(f"artifact file:{loc} does not exist") from None

    def write(self, loc, root, data: bytes, meta: dict | None) -> None:
        p = self.path(loc, root)
        p.parent.mkdir(parents=True, exist_ok=True)
        if meta is not None:
            atomic_write(p.with_name(p.name + ".meta.json"), json.dumps(meta, sort_keys=True).encode())
        atomic_write(p, data)

    def meta(self, loc, root) -> dict:
        m = self.path(loc, root)
        m = m.with_name(m.name + ".meta.json")
        try:
            return json.loads(m.read_text("utf-8"))
        except (FileNotFoundError, json.JSONDecodeError):
            return {}


def directory_manifest(path: Path) -> bytes:
    """Canonical JSON of a directory's text files, so directories can be read as artifacts."""
    files = {}
    for f in sorted(path.rglob("*")):
        if f.is_file() and not any(part.startswith(".") for part in f.relative_to(path).parts):
            files[f.relative_to(path).as_posix()] = f.read_text("utf-8")
    return json.dumps({"directory": files}, sort_keys=True, separators=(",", ":")).encode("utf-8")


def atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _KVBackend:
    """SQLite table keyed by (namespace, key); every write is one transaction."""

    _lock = threading.Lock()
    _ready: set[str] = set()

    def _conn(self, root: Path) -> sqlite3.Connection:
        root.mkdir(parents=True, exist_ok=True)
        db = str(root / "kv.sqlite")
        conn = sqlite3.connect(db, timeout=30, isolation_level=None)
        with self._lock:
            if db not in self._ready:
                conn.execute("PRAGMA journal_mode=WAL")
                conn.execute(
                    "CREATE TABLE IF NOT EXISTS artifacts (ns TEXT, key TEXT, value BLOB, meta TEXT,"
                    " PRIMARY KEY (ns, key))"
                )
                self._ready.add(db)
        return conn

    @staticmethod
    def _split(loc: str) -> tuple[str, str]:
        ns, _, key = loc.partition("/")
        if not ns or not key:
            raise ArtifactError(f"kv artifact needs kv://<namespace>/<key>, got kv://{loc}")
        return ns, key

    def _get(self, loc, root, col):
        ns, key = self._split(loc)
        conn = self._conn(root)
        try:
            row = conn.execute(f"SELECT {col} FROM artifacts WHERE ns=? AND key=?", (ns, key)).fetchone()
        finally:
            conn.close()
        return row

    def exists(self, loc, root):
        return self._get(loc, root, "1") is not None

    def read(self, loc, root):
        row = self._get(loc, root, "value")
        if row is None:
            raise ArtifactError(f"artifact kv://{loc} does not exist")
        return bytes(row[0])

    def write(self, loc, root, data, meta):
        ns, key = self._split(loc)
        conn = self._conn(root)
        try:
            conn.execute(
                "INSERT OR REPLACE INTO artifacts (ns, key, value, meta) VALUES (?, ?, ?, ?)",
                (ns, key, sqlite3.Binary(data), json.dumps(meta or {}, sort_keys=True)),
            )
        finally:
            conn.close()

    def meta(self, loc, root):
        row = self._get(loc, root, "meta")
        return json.loads(row[0]) if row and row[0] else {}


class _MemBackend:
    _lock = threading.Lock()
    _data: dict[str, tuple[bytes, dict]] = {}

    def exists(self, loc, root):
        return loc in self._data

    def read(self, loc, root):
        with self._lock:
            if loc not in self._data:
                raise ArtifactError(f"artifact mem://{loc} does not exist")
            return self._data[loc][0]

    def write(self, loc, root, data, meta):
        with self._lock:
            self._data[loc] = (bytes(data), dict(meta or {}))

    def meta(self, loc, root):
        with self._lock:
            return dict(self._data.get(loc, (b"", {}))[1])

    def clear(self, prefix: str = "") -> None:
        with self._lock:
            for k in [k for k in self._data if k.startswith(prefix)]:
                del self._data[k]


_BACKENDS = {"file": _FileBackend(), "kv": _KVBackend(), "mem": _MemBackend()}


def _parse(uri: str) -> tuple[str, str]:
    if "://" in uri:
        scheme, _, loc = uri.partition("://")
        if scheme not in _BACKENDS:
            raise ArtifactError(f"unsupported artifact scheme {scheme!r}")
        return scheme, loc
    return "file", uri


class Artifact:
    """Uniform read/write handle. Payloads are bytes; helpers encode text, JSON and objects."""

    def __init__(self, uri: str, root: str | Path | None = None):
        self.uri = str(uri)
        self.scheme, self.location = _parse(self.uri)
        self.root = Path(root) if root is not None else None
        self._backend = _BACKENDS[self.scheme]

    def __repr__(self) -> str:
        return f"Artifact({self.uri!r})"

    def _root(self) -> Path:
        return self.root if self.root is not None else artifact_root()

    def exists(self) -> bool:
        return self._backend.exists(self.location, self._root())

    def fetch(self) -> bytes:
        return self._backend.read(self.location, self._root())

    def fetch_text(self) -> str:
        return self.fetch().decode("utf-8")

    def fetch_json(self) -> Any:
        return json.loads(self.fetch_text())

    def fetch_object(self) -> Any:
        return pickle.loads(self.fetch())

    def put(self, data: Any, meta: dict | None = None) -> None:
        self._backend.write(self.location, self._root(), encode_payload(data), meta)

    def put_json(self, obj: Any, meta: dict | None = None) -> None:
        self.put(json.dumps(obj, sort_keys=True, indent=1).encode("utf-8"), meta)

    def digest(self) -> str:
        return digest_bytes(self.fetch())

    def meta(self) -> dict:
        return self._backend.meta(self.location, self._root())

    @property
    def path(self) -> Path | None:
        """Filesystem path for ``file`` artifacts."""
        if self.scheme != "file":
            return None
        return self._backend.path(self.location, self._root())


def encode_payload(data: Any) -> bytes:
    if isinstance(data, (bytes, bytearray, memoryview)):
        return bytes(data)
    if isinstance(data, str):
        return data.encode("utf-8")
    return pickle.dumps(data, protocol=4)


def kv_artifact(key: str) -> Artifact:
    """Artifact in the embedded key-value store, e.g. ``kv_artifact('models/classifier')``."""
    return Artifact(f"kv://{key}")


def new_mem_uri(prefix: str = "tmp") -> str:
    return f"mem://{prefix}/{uuid.uuid4().hex}"
