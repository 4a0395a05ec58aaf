"""Data model for groups, posts and query sets, plus line-delimited JSON ingestion.

A corpus file holds one JSON object per line. Lines carrying a ``post_id`` are
posts; lines carrying ``group_id`` and ``name`` without a ``post_id`` declare a
group. Blank lines are skipped, unknown keys are ignored.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateId, MalformedRecord, UnknownGroup
from .textproc import normalize

POST_FIELDS = ("post_id", "group_id", "author_id", "text", "created_at", "clicks", "shares", "comments")
ENGAGEMENT_FIELDS = ("clicks", "shares", "comments")


@dataclass(frozen=True)
class Post:
    post_id: str
    group_id: str
    author_id: str
    text: str
    created_at: int
    clicks: int = 0
    shares: int = 0
    comments: int = 0

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in POST_FIELDS}


@dataclass(frozen=True)
class Group:
    group_id: str
    name: str
    post_count: int = 0


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    group_id: str
    query_text: str
    user_id: str = "anonymous"

    def to_record(self) -> dict:
        return {"query_id": self.query_id, "group_id": self.group_id,
                "query_text": self.query_text, "user_id": self.user_id}


class Corpus:
    """Immutable validated collection of groups and their posts."""

    def __init__(self, groups: Iterable[Group], posts: Iterable[Post]):
        posts = list(posts)
        by_id: dict[str, Post] = {}
        for p in posts:
            if p.post_id in by_id:
                raise DuplicateId(p.post_id)
            by_id[p.post_id] = p
        names: dict[str, str] = {}
        for g in groups:
            if g.group_id in names:
                raise DuplicateId(g.group_id)
            names[g.group_id] = g.name
        members: dict[str, list[str]] = {gid: [] for gid in names}
        for p in posts:
            if p.group_id not in members:
                raise UnknownGroup(p.group_id)
            members[p.group_id].append(p.post_id)
        self._posts = {pid: by_id[pid] for pid in sorted(by_id)}
        self._members = {gid: tuple(sorted(m)) for gid, m in sorted(members.items())}
        self._groups = {gid: Group(gid, names[gid], len(self._members[gid])) for gid in self._members}

    @property
    def groups(self) -> dict[str, Group]:
        return dict(self._groups)

    @property
    def posts(self) -> dict[str, Post]:
        return dict(self._posts)

    def __len__(self) -> int:
        return len(self._posts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self._groups == other._groups and self._posts == other._posts

    def group_ids(self) -> list[str]:
        return list(self._groups)

    def has_group(self, group_id: str) -> bool:
        return group_id in self._groups

    def post(self, post_id: str) -> Post:
        return self._posts[post_id]

    def get(self, post_id: str) -> Post | None:
        return self._posts.get(post_id)

    def post_ids(self, group_id: str) -> tuple[str, ...]:
        """Post ids of a group in ascending order."""
        try:
            return self._members[group_id]
        except KeyError:
            raise UnknownGroup(group_id) from None

    def posts_in_group(self, group_id: str) -> list[Post]:
        return [self._posts[pid] for pid in self.post_ids(group_id)]

    def post_count(self, group_id: str) -> int:
        return len(self.post_ids(group_id))

    def records(self) -> Iterator[dict]:
        for g in self._groups.values():
            yield {"group_id": g.group_id, "name": g.name}
        for p in self._posts.values():
            yield p.to_record()


def _require_int(rec: dict, key: str, line_no: int, default: int | None = None) -> int:
    value = rec.get(key, default)
    if value is None:
        raise MalformedRecord(line_no, f"missing {key}")
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise MalformedRecord(line_no, f"{key} must be a non-negative integer")
    return value


def _require_str(rec: dict, key: str, line_no: int) -> str:
    value = rec.get(key)
    if not isinstance(value, str) or not value:
        raise MalformedRecord(line_no, f"{key} must be a non-empty string")
    return value


def _iter_json_lines(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, exc.msg) from None
            if not isinstance(rec, dict):
                raise MalformedRecord(line_no, "record is not an object")
            yield line_no, rec


def _parse_post(rec: dict, line_no: int) -> Post:
    text = rec.get("text")
    if not isinstance(text, str) or not normalize(text):
        raise MalformedRecord(line_no, "text is empty after normalization")
    return Post(
        post_id=_require_str(rec, "post_id", line_no),
        group_id=_require_str(rec, "group_id", line_no),
        author_id=str(rec.get("author_id", "")),
        text=text,
        created_at=_require_int(rec, "created_at", line_no),
        **{k: _require_int(rec, k, line_no, default=0) for k in ENGAGEMENT_FIELDS},
    )


def load_corpus(path: str | Path) -> Corpus:
    groups: list[Group] = []
    posts: list[Post] = []
    seen: set[str] = set()
    for line_no, rec in _iter_json_lines(path):
        if "post_id" in rec:
            post = _parse_post(rec, line_no)
            if post.post_id in seen:
                raise DuplicateId(post.post_id)
            seen.add(post.post_id)
            posts.append(post)
        elif "group_id" in rec:
            gid = _require_str(rec, "group_id", line_no)
            groups.append(Group(gid, str(rec.get("name", gid))))
        else:
            raise MalformedRecord(line_no, "neither a post nor a group record")
    return Corpus(groups, posts)


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records():
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_queries(path: str | Path) -> list[QueryRecord]:
    out: list[QueryRecord] = []
    seen: set[str] = set()
    for line_no, rec in _iter_json_lines(path):
        qid = _require_str(rec, "query_id", line_no)
        if qid in seen:
            raise DuplicateId(qid)
        seen.add(qid)
        text = rec.get("query_text")
        if not isinstance(text, str) or not normalize(text):
            raise MalformedRecord(line_no, "query_text is empty after normalization")
        out.append(QueryRecord(qid, _require_str(rec, "group_id", line_no), text,
                               str(rec.get("user_id", "anonymous"))))
    return out


def dump_queries(queries: Iterable[QueryRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def group_counts(corpus: Corpus) -> Counter:
    return Counter({gid: corpus.post_count(gid) for gid in corpus.group_ids()})
