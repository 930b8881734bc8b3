"""Comment-dump ingestion.

Parses JSON Lines comment dumps, reconstructs reply threads with
parent/child links, extracts each user's chronologically ordered
parent-comment contexts, and derives observed exit orders.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .ranking import average_ranks

if TYPE_CHECKING:
    from .scoring import ScoreLevel

# Reddit-style type prefixes ("t1_", "t3_", ...) are stripped from all ids.
_ID_PREFIX = re.compile(r"^t\d+_")

# Author/body markers for comments deleted on the platform; such comments
# carry no scoreable text and are dropped outright.
_TOMBSTONES = frozenset({"", "[removed]", "[deleted]"})


class IngestError(Exception):
    """Unrecoverable ingestion failure (stream I/O, unusable corpus)."""


class CorpusError(IngestError):
    """Structurally broken corpus: duplicate ids or a parent-link cycle."""


@dataclass(frozen=True)
class Comment:
    """One platform comment or post.

    Thread roots have no parent_id. thread_id may be empty when the dump
    did not carry a link id; build_threads resolves membership by walking
    parent links in that case.
    """

    id: str
    author: str
    subreddit: str
    created_utc: int
    body: str
    engagement: int = 0
    parent_id: str | None = None
    thread_id: str = ""


@dataclass(frozen=True)
class CommentContext:
    """A message, its direct parent, and the chronological ancestor chain."""

    message: Comment
    parent: Comment
    ancestors: tuple[Comment, ...] = ()

    def __post_init__(self) -> None:
        if self.message.parent_id != self.parent.id:
            raise ValueError(
                f"context message {self.message.id!r} does not reply to {self.parent.id!r}"
            )
        for earlier, later in zip(self.ancestors, self.ancestors[1:]):
            if later.created_utc <= earlier.created_utc:
                raise ValueError("context ancestors must be strictly chronological")
        if any(a.id == self.parent.id for a in self.ancestors):
            raise ValueError("context parent may not appear among its own ancestors")


@dataclass
class HistoryEntry:
    context: CommentContext
    support: ScoreLevel | None = None


@dataclass
class UserHistory:
    """One user's parent-comment contexts in one subreddit, oldest first."""

    user: str
    subreddit: str
    entries: list[HistoryEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        key = None
        for entry in self.entries:
            message = entry.context.message
            if message.author != self.user:
                raise ValueError(f"history for {self.user!r} contains a comment by {message.author!r}")
            this = (message.created_utc, message.id)
            if key is not None and this < key:
                raise ValueError("history entries must be chronological (ties by comment id)")
            key = this


@dataclass
class ExitRecord:
    """A user's observed departure position within one subreddit."""

    user: str
    subreddit: str
    last_active_utc: int
    actual_rank: float
    predicted_rank: float | None = None


@dataclass
class ParseResult:
    comments: list[Comment]
    malformed: int = 0
    dropped: int = 0


def strip_id_prefix(raw: str) -> str:
    return _ID_PREFIX.sub("", raw)


def comment_payload(comment: Comment) -> dict[str, Any]:
    """All retained fields of a comment, in a stable JSON-ready shape."""
    return {
        "id": comment.id,
        "parent_id": comment.parent_id,
        "thread_id": comment.thread_id,
        "author": comment.author,
        "subreddit": comment.subreddit,
        "created_utc": comment.created_utc,
        "body": comment.body,
        "engagement": comment.engagement,
    }


def _comment_from_record(record: dict[str, Any]) -> Comment | None:
    """Build a Comment from one decoded JSONL object, or None if malformed."""
    try:
        comment_id = strip_id_prefix(str(record["id"]))
        author = str(record["author"])
        subreddit = str(record["subreddit"])
        created_utc = int(record["created_utc"])
        body = str(record["body"])
    except (KeyError, TypeError, ValueError):
        return None
    if not comment_id or not author or not subreddit or created_utc <= 0:
        return None

    parent_raw = record.get("parent_id")
    parent_id = strip_id_prefix(str(parent_raw)) if parent_raw else None
    if parent_id == comment_id:
        return None

    thread_raw = record.get("link_id") or record.get("thread_id")
    if thread_raw:
        thread_id = strip_id_prefix(str(thread_raw))
    else:
        thread_id = comment_id if parent_id is None else ""

    try:
        engagement = int(record.get("score", record.get("engagement", 0)) or 0)
    except (TypeError, ValueError):
        return None

    return Comment(
        id=comment_id,
        author=author,
        subreddit=subreddit,
        created_utc=created_utc,
        body=body,
        engagement=engagement,
        parent_id=parent_id,
        thread_id=thread_id,
    )


def parse_comments(stream: Iterable[bytes] | Iterable[str]) -> ParseResult:
    """Parse a JSON Lines comment dump.

    Malformed lines are counted, not fatal. Comments deleted on the platform
    (tombstone author or body) are dropped and counted separately. A failure
    of the stream itself raises IngestError naming the last good line.
    """
    comments: list[Comment] = []
    malformed = 0
    dropped = 0
    last_ok = 0
    lines = iter(stream)
    lineno = 0
    while True:
        try:
            raw = next(lines)
        except StopIteration:
            break
        except (OSError, ValueError) as exc:
            raise IngestError(f"comment stream failed after line {last_ok}: {exc}") from exc
        lineno += 1
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                malformed += 1
                continue
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError:
            malformed += 1
            continue
        if not isinstance(record, dict):
            malformed += 1
            continue
        comment = _comment_from_record(record)
        if comment is None:
            malformed += 1
            continue
        last_ok = lineno
        if comment.author in _TOMBSTONES or comment.body.strip() in _TOMBSTONES:
            dropped += 1
            continue
        comments.append(comment)
    return ParseResult(comments=comments, malformed=malformed, dropped=dropped)


def load_comments(path: str | Path) -> ParseResult:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            return parse_comments(handle)
    except OSError as exc:
        raise IngestError(f"cannot read comment dump {path}: {exc}") from exc


@dataclass
class ThreadIndex:
    """Reconstructed thread structure over one parsed corpus."""

    by_id: dict[str, Comment]
    threads: dict[str, list[Comment]]
    children: dict[str, list[str]]
    orphans: frozenset[str]
    thread_of: dict[str, str]


def _detect_parent_cycles(by_id: dict[str, Comment]) -> None:
    state: dict[str, int] = {}  # 1 = on current walk, 2 = cleared
    for start in by_id:
        if state.get(start) == 2:
            continue
        path: list[str] = []
        cur: str | None = start
        while cur is not None and cur in by_id and state.get(cur) != 2:
            if state.get(cur) == 1:
                members = path[path.index(cur):]
                raise CorpusError(
                    "parent links form a cycle: " + " -> ".join(members + [cur])
                )
            state[cur] = 1
            path.append(cur)
            cur = by_id[cur].parent_id
        for cid in path:
            state[cid] = 2


def build_threads(comments: Sequence[Comment]) -> ThreadIndex:
    """Index a corpus: thread membership, parent->children links, orphan flags.

    Deterministic and insensitive to input order; all listings are sorted by
    (created_utc, id). Duplicate ids and parent cycles raise CorpusError.
    """
    by_id: dict[str, Comment] = {}
    for comment in comments:
        if comment.id in by_id:
            raise CorpusError(f"duplicate comment id {comment.id!r}")
        by_id[comment.id] = comment

    _detect_parent_cycles(by_id)

    orphans = frozenset(
        c.id for c in by_id.values() if c.parent_id is not None and c.parent_id not in by_id
    )

    thread_of: dict[str, str] = {}
    for comment in by_id.values():
        chain: list[str] = []
        cur = comment
        while cur.id not in thread_of:
            if cur.thread_id:
                thread_of[cur.id] = cur.thread_id
                break
            if cur.parent_id is None or cur.parent_id not in by_id:
                thread_of[cur.id] = cur.id
                break
            chain.append(cur.id)
            cur = by_id[cur.parent_id]
        resolved = thread_of[cur.id]
        for cid in chain:
            thread_of[cid] = resolved

    threads: dict[str, list[Comment]] = {}
    for comment in by_id.values():
        threads.setdefault(thread_of[comment.id], []).append(comment)
    for members in threads.values():
        members.sort(key=lambda c: (c.created_utc, c.id))

    children: dict[str, list[str]] = {}
    for comment in by_id.values():
        if comment.parent_id is not None and comment.parent_id in by_id:
            children.setdefault(comment.parent_id, []).append(comment.id)
    for ids in children.values():
        ids.sort(key=lambda cid: (by_id[cid].created_utc, cid))

    return ThreadIndex(
        by_id=by_id,
        threads=threads,
        children=children,
        orphans=orphans,
        thread_of=thread_of,
    )


def ancestor_chain(index: ThreadIndex, comment_id: str) -> list[Comment]:
    """Comments strictly above comment_id on its parent chain, oldest first."""
    chain: list[Comment] = []
    cur = index.by_id[comment_id]
    while cur.parent_id is not None and cur.parent_id in index.by_id:
        cur = index.by_id[cur.parent_id]
        chain.append(cur)
    chain.reverse()
    return chain


def _chronological(chain: list[Comment]) -> list[Comment]:
    # Guards against clock skew in real dumps: keep a strictly increasing
    # subsequence, scanning from the thread root downward.
    kept: list[Comment] = []
    for comment in chain:
        if not kept or comment.created_utc > kept[-1].created_utc:
            kept.append(comment)
    return kept


def extract_parent_contexts(
    user: str,
    subreddit: str,
    index: ThreadIndex,
    max_ancestors: int = 10,
) -> UserHistory:
    """Collect the user's reply contexts in one subreddit, oldest first.

    One entry per comment by the user whose parent exists in the corpus.
    Ancestors are the up-to-max_ancestors comments nearest above the parent,
    in chronological order; the chain may be incomplete.
    """
    if max_ancestors < 0:
        raise ValueError("max_ancestors must be >= 0")
    messages = [
        c
        for c in index.by_id.values()
        if c.author == user
        and c.subreddit == subreddit
        and c.parent_id is not None
        and c.parent_id in index.by_id
    ]
    messages.sort(key=lambda c: (c.created_utc, c.id))

    entries: list[HistoryEntry] = []
    for message in messages:
        parent = index.by_id[message.parent_id]  # type: ignore[index]
        ancestors = _chronological(ancestor_chain(index, parent.id))
        if max_ancestors == 0:
            ancestors = []
        elif len(ancestors) > max_ancestors:
            ancestors = ancestors[-max_ancestors:]
        entries.append(HistoryEntry(CommentContext(message, parent, tuple(ancestors))))
    return UserHistory(user=user, subreddit=subreddit, entries=entries)


def compute_actual_exit_order(comments: Sequence[Comment], subreddit: str) -> list[ExitRecord]:
    """Rank the subreddit's users by when they were last seen active.

    Rank 1 is the earliest-inactive user; exact last-activity ties share the
    average rank. Returns [] when the subreddit has no comments.
    """
    last_active: dict[str, int] = {}
    for comment in comments:
        if comment.subreddit != subreddit:
            continue
        prev = last_active.get(comment.author)
        if prev is None or comment.created_utc > prev:
            last_active[comment.author] = comment.created_utc
    if not last_active:
        return []
    users = sorted(last_active)
    ranks = average_ranks([float(last_active[u]) for u in users])
    records = [
        ExitRecord(
            user=u,
            subreddit=subreddit,
            last_active_utc=last_active[u],
            actual_rank=rank,
        )
        for u, rank in zip(users, ranks)
    ]
    records.sort(key=lambda r: (r.last_active_utc, r.user))
    return records
