"""Versioned on-disk model store.

Layout::

    <root>/<skill-id>/<version>/bundle.bin
    <root>/<skill-id>/<version>/meta.json
    <root>/<skill-id>/latest

``latest`` holds the newest version number and is replaced atomically
after the bundle file is in place, so readers see either the old or the
new version and never a partial bundle.
"""

from __future__ import annotations

import fcntl
import json
import os
import re
import threading
import time
from contextlib import contextmanager
from pathlib import Path

from ..pipeline.artifacts import atomic_write
from .bundle import BundleCorruptError, SkillModelBundle

__all__ = [
    "ModelStore",
    "StoreError",
    "UnknownSkillError",
    "VersionNotFoundError",
    "store_bundle",
    "load_bundle",
]

SKILL_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class StoreError(LookupError):
    pass


class UnknownSkillError(StoreError):
    pass


class VersionNotFoundError(StoreError):
    pass


class ModelStore:
    _locks: dict[str, threading.Lock] = {}
    _locks_guard = threading.Lock()

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def __repr__(self) -> str:
        return f"ModelStore({str(self.root)!r})"

    def _skill_dir(self, skill_id: str) -> Path:
        if not SKILL_ID_RE.match(skill_id):
            raise StoreError(f"invalid skill id {skill_id!r}")
        return self.root / skill_id

    @contextmanager
    def _write_lock(self, skill_id: str):
        d = self._skill_dir(skill_id)
        d.mkdir(parents=True, exist_ok=True)
        key = str(d.resolve())
        with self._locks_guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock, open(d / ".lock", "a+") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield d
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def skills(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "latest").is_file())

    def versions(self, skill_id: str) -> list[int]:
        d = self._skill_dir(skill_id)
        if not d.is_dir():
            raise UnknownSkillError(f"unknown skill {skill_id!r}")
        return sorted(int(p.name) for p in d.iterdir() if p.name.isdigit() and (p / "bundle.bin").is_file())

    def latest_version(self, skill_id: str) -> int:
        try:
            return int((self._skill_dir(skill_id) / "latest").read_text().strip())
        except FileNotFoundError:
            raise UnknownSkillError(f"unknown skill {skill_id!r}") from None

    def store(self, bundle: SkillModelBundle, extra_meta: dict | None = None) -> SkillModelBundle:
        """Write ``bundle`` as the next version of its skill and return it with that version."""
        with self._write_lock(bundle.skill_id) as d:
            try:
                latest = int((d / "latest").read_text().strip())
            except FileNotFoundError:
                latest = 0
            existing = [int(p.name) for p in d.iterdir() if p.name.isdigit()]
            version = max([latest, *existing]) + 1
            stored = bundle.with_version(version)
            vdir = d / str(version)
            vdir.mkdir()
            data = stored.to_bytes()
            atomic_write(vdir / "bundle.bin", data)
            meta = {
                "skill_id": bundle.skill_id,
                "version": version,
                "stored_at": time.time(),
                "invocation_name": bundle.invocation_name,
                "content_digest": stored.content_digest(),
                "size": len(data),
                **(extra_meta or {}),
            }
            atomic_write(vdir / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
            atomic_write(d / "latest", f"{version}\n".encode())
            return stored

    def bundle_path(self, skill_id: str, version: int | None = None) -> Path:
        if version is None:
            version = self.latest_version(skill_id)
        p = self._skill_dir(skill_id) / str(version) / "bundle.bin"
        if not p.is_file():
            if not self._skill_dir(skill_id).is_dir():
                raise UnknownSkillError(f"unknown skill {skill_id!r}")
            raise VersionNotFoundError(f"skill {skill_id!r} has no version {version}")
        return p

    def load(self, skill_id: str, version: int | None = None) -> SkillModelBundle:
        path = self.bundle_path(skill_id, version)
        data = path.read_bytes()
        bundle = SkillModelBundle.from_bytes(data)
        if bundle.skill_id != skill_id or (version is not None and bundle.version != version):
            raise BundleCorruptError(f"bundle at {path} does not match {skill_id} v{version}")
        return bundle

    def meta(self, skill_id: str, version: int | None = None) -> dict:
        path = self.bundle_path(skill_id, version).with_name("meta.json")
        try:
            return json.loads(path.read_text("utf-8"))
        except FileNotFoundError:
            return {}

    def find_by_invocation(self, invocation_name: str) -> list[str]:
        out = []
        for s in self.skills():
            if self.meta(s).get("invocation_name") == invocation_name:
                out.append(s)
        return out


def store_bundle(store: ModelStore | str | os.PathLike, bundle: SkillModelBundle, **meta) -> SkillModelBundle:
    store = store if isinstance(store, ModelStore) else ModelStore(store)
    return store.store(bundle, meta or None)


def load_bundle(store: ModelStore | str | os.PathLike, skill_id: str, version: int | None = None) -> SkillModelBundle:
    store = store if isinstance(store, ModelStore) else ModelStore(store)
    return store.load(skill_id, version)
