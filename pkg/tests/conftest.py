from __future__ import annotations

import io
import json
from pathlib import Path

import pytest

from gravwell.ingest import Comment, CommentContext, HistoryEntry, UserHistory

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_CORPUS = DATA_DIR / "golden_corpus.jsonl"


def make_comment(
    cid: str,
    author: str = "alice",
    subreddit: str = "apples",
    created_utc: int = 1000,
    body: str = "A perfectly ordinary comment.",
    engagement: int = 0,
    parent_id: str | None = None,
    thread_id: str = "",
) -> Comment:
    return Comment(
        id=cid,
        author=author,
        subreddit=subreddit,
        created_utc=created_utc,
        body=body,
        engagement=engagement,
        parent_id=parent_id,
        thread_id=thread_id,
    )


def jsonl_stream(records: list[dict]) -> io.BytesIO:
    payload = "".join(json.dumps(r) + "\n" for r in records)
    return io.BytesIO(payload.encode("utf-8"))


@pytest.fixture
def fixture_context() -> CommentContext:
    root = make_comment(
        "r1",
        author="opal",
        created_utc=100,
        body="Honeycrisp season is the best part of fall.",
        engagement=12,
        thread_id="r1",
    )
    msg = make_comment(
        "c1",
        author="alice",
        created_utc=160,
        body="Absolutely, the crunch is unbeatable.",
        engagement=3,
        parent_id="r1",
        thread_id="r1",
    )
    return CommentContext(msg, root)


@pytest.fixture
def fixture_context_pair(fixture_context: CommentContext) -> tuple[CommentContext, CommentContext]:
    root2 = make_comment(
        "r2",
        author="quinn",
        created_utc=300,
        body="Tart apples make better pies than sweet ones.",
        engagement=7,
        thread_id="r2",
    )
    msg2 = make_comment(
        "c2",
        author="alice",
        created_utc=360,
        body="Hard disagree, a sweet apple pie needs no sugar added.",
        engagement=1,
        parent_id="r2",
        thread_id="r2",
    )
    return fixture_context, CommentContext(msg2, root2)


def make_history(
    user: str,
    bodies: list[str],
    subreddit: str = "apples",
    t0: int = 1000,
) -> UserHistory:
    """One reply per body, each to its own single-root thread."""
    entries = []
    for i, body in enumerate(bodies):
        root = make_comment(
            f"root{i:04d}",
            author=f"op{i:04d}",
            subreddit=subreddit,
            created_utc=t0 + 100 * i,
            body=f"Thread starter number {i} with its own opinion.",
            engagement=10 + i,
            thread_id=f"root{i:04d}",
        )
        msg = make_comment(
            f"msg{i:04d}",
            author=user,
            subreddit=subreddit,
            created_utc=t0 + 100 * i + 10,
            body=body,
            engagement=i,
            parent_id=root.id,
            thread_id=root.id,
        )
        entries.append(HistoryEntry(CommentContext(msg, root)))
    return UserHistory(user=user, subreddit=subreddit, entries=entries)
