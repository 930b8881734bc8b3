from __future__ import annotations

import io
import json
import random

import pytest

from gravwell.ingest import (
    Comment,
    CommentContext,
    CorpusError,
    IngestError,
    build_threads,
    comment_payload,
    compute_actual_exit_order,
    extract_parent_contexts,
    parse_comments,
)

from conftest import jsonl_stream, make_comment


def valid_record(cid: str = "abc", **overrides) -> dict:
    record = {
        "id": cid,
        "author": "alice",
        "subreddit": "apples",
        "created_utc": 1000,
        "body": "some text",
        "score": 3,
    }
    record.update(overrides)
    return record


class TestParseComments:
    def test_empty_stream(self):
        result = parse_comments(io.BytesIO(b""))
        assert result.comments == []
        assert result.malformed == 0
        assert result.dropped == 0

    def test_malformed_lines_counted_not_fatal(self):
        lines = [
            json.dumps(valid_record("a")),
            "{not json",
            json.dumps(valid_record("b")),
            json.dumps(valid_record("c")),
        ]
        result = parse_comments(io.StringIO("\n".join(lines) + "\n"))
        assert [c.id for c in result.comments] == ["a", "b", "c"]
        assert result.malformed == 1

    @pytest.mark.parametrize(
        "record",
        [
            valid_record(author="[deleted]"),
            valid_record(body=""),
            valid_record(body="[removed]"),
            valid_record(body="[deleted]"),
        ],
    )
    def test_deleted_comments_dropped(self, record):
        result = parse_comments(jsonl_stream([record]))
        assert result.comments == []
        assert result.dropped == 1
        assert result.malformed == 0

    @pytest.mark.parametrize(
        "record",
        [
            {"author": "a", "subreddit": "s", "created_utc": 1, "body": "x"},  # no id
            valid_record(created_utc=0),
            valid_record(created_utc="not a number"),
            valid_record(id="t1_x", parent_id="t1_x"),  # parent == self
            [1, 2, 3],  # not an object
        ],
    )
    def test_malformed_records(self, record):
        result = parse_comments(jsonl_stream([record]))
        assert result.comments == []
        assert result.malformed == 1

    def test_prefixes_stripped(self):
        record = valid_record("t1_abc", parent_id="t1_xyz", link_id="t3_th1")
        (comment,) = parse_comments(jsonl_stream([record])).comments
        assert comment.id == "abc"
        assert comment.parent_id == "xyz"
        assert comment.thread_id == "th1"

    def test_root_without_link_id_is_its_own_thread(self):
        record = valid_record("root1")
        (comment,) = parse_comments(jsonl_stream([record])).comments
        assert comment.parent_id is None
        assert comment.thread_id == "root1"

    def test_blank_lines_ignored(self):
        stream = io.StringIO("\n" + json.dumps(valid_record("a")) + "\n\n")
        result = parse_comments(stream)
        assert len(result.comments) == 1
        assert result.malformed == 0

    def test_roundtrip_all_retained_fields(self):
        records = [
            valid_record("a", parent_id="t1_b", link_id="t3_th"),
            valid_record("b"),
        ]
        first = parse_comments(jsonl_stream(records)).comments
        reserialized = [json.dumps(comment_payload(c)) + "\n" for c in first]
        second = parse_comments(io.StringIO("".join(reserialized))).comments
        assert first == second

    def test_stream_failure_reports_last_good_line(self):
        def broken():
            yield json.dumps(valid_record("a"))
            yield json.dumps(valid_record("b"))
            raise OSError("disk went away")

        with pytest.raises(IngestError, match="after line 2"):
            parse_comments(broken())


class TestBuildThreads:
    def test_root_and_two_replies(self):
        comments = [
            make_comment("r", created_utc=10, thread_id="r"),
            make_comment("x", created_utc=20, parent_id="r"),
            make_comment("y", created_utc=30, parent_id="r"),
        ]
        index = build_threads(comments)
        assert set(index.threads) == {"r"}
        assert [c.id for c in index.threads["r"]] == ["r", "x", "y"]
        assert index.children["r"] == ["x", "y"]
        assert index.orphans == frozenset()

    def test_orphan_flagged_but_retained(self):
        comments = [
            make_comment("r", created_utc=10, thread_id="r"),
            make_comment("x", created_utc=20, parent_id="missing", thread_id="r"),
        ]
        index = build_threads(comments)
        assert index.orphans == frozenset({"x"})
        assert "x" in index.by_id

    def test_cycle_detected_and_named(self):
        comments = [
            make_comment("a", created_utc=10, parent_id="b"),
            make_comment("b", created_utc=20, parent_id="a"),
        ]
        with pytest.raises(CorpusError) as err:
            build_threads(comments)
        assert "a" in str(err.value) and "b" in str(err.value)

    def test_duplicate_id_rejected(self):
        comments = [make_comment("a"), make_comment("a")]
        with pytest.raises(CorpusError, match="duplicate"):
            build_threads(comments)

    def test_thread_resolved_through_parent_chain(self):
        # No link ids on the replies: membership comes from walking parents.
        comments = [
            make_comment("r", created_utc=10),
            make_comment("x", created_utc=20, parent_id="r"),
            make_comment("y", created_utc=30, parent_id="x"),
        ]
        index = build_threads(comments)
        assert index.thread_of == {"r": "r", "x": "r", "y": "r"}

    def test_order_insensitive(self):
        comments = [
            make_comment("r", created_utc=10, thread_id="r"),
            make_comment("x", created_utc=20, parent_id="r", thread_id="r"),
            make_comment("y", created_utc=20, parent_id="r", thread_id="r"),
            make_comment("z", created_utc=40, parent_id="y", thread_id="r"),
            make_comment("q", created_utc=50, parent_id="lost", thread_id="r"),
        ]
        reference = build_threads(comments)
        rng = random.Random(7)
        for _ in range(5):
            shuffled = comments[:]
            rng.shuffle(shuffled)
            index = build_threads(shuffled)
            assert index.by_id == reference.by_id
            assert index.threads == reference.threads
            assert index.children == reference.children
            assert index.orphans == reference.orphans
            assert index.thread_of == reference.thread_of


def chain_index():
    """One thread: r <- m1 <- m2 <- m3 <- m4, alternating authors."""
    comments = [
        make_comment("r", author="opal", created_utc=100, thread_id="r"),
        make_comment("m1", author="zed", created_utc=200, parent_id="r", thread_id="r"),
        make_comment("m2", author="alice", created_utc=300, parent_id="m1", thread_id="r"),
        make_comment("m3", author="zed", created_utc=400, parent_id="m2", thread_id="r"),
        make_comment("m4", author="alice", created_utc=500, parent_id="m3", thread_id="r"),
    ]
    return build_threads(comments)


class TestExtractParentContexts:
    def test_user_with_no_comments(self):
        history = extract_parent_contexts("nobody", "apples", chain_index())
        assert history.user == "nobody"
        assert history.entries == []

    def test_reply_to_thread_root(self):
        index = build_threads(
            [
                make_comment("r", author="opal", created_utc=10, thread_id="r"),
                make_comment("x", author="alice", created_utc=20, parent_id="r", thread_id="r"),
            ]
        )
        history = extract_parent_contexts("alice", "apples", index)
        (entry,) = history.entries
        assert entry.context.parent.id == "r"
        assert entry.context.ancestors == ()

    def test_ancestor_chains_and_truncation(self):
        index = chain_index()
        history = extract_parent_contexts("alice", "apples", index, max_ancestors=2)
        assert [e.context.message.id for e in history.entries] == ["m2", "m4"]
        first, second = history.entries
        # m2 replies to m1, whose only ancestor is the root.
        assert [a.id for a in first.context.ancestors] == ["r"]
        # m4 replies to m3; full chain is r, m1, m2 but only the nearest 2 are kept.
        assert [a.id for a in second.context.ancestors] == ["m1", "m2"]

    def test_max_ancestors_zero(self):
        index = chain_index()
        history = extract_parent_contexts("alice", "apples", index, max_ancestors=0)
        assert all(e.context.ancestors == () for e in history.entries)

    def test_entries_chronological_and_well_formed(self):
        index = chain_index()
        for user in ("alice", "zed"):
            history = extract_parent_contexts(user, "apples", index, max_ancestors=10)
            times = [e.context.message.created_utc for e in history.entries]
            assert times == sorted(times)
            for entry in history.entries:
                assert entry.context.message.author == user
                assert entry.context.message.parent_id == entry.context.parent.id

    def test_orphan_reply_has_no_context(self):
        index = build_threads(
            [make_comment("x", author="alice", created_utc=20, parent_id="gone", thread_id="t")]
        )
        history = extract_parent_contexts("alice", "apples", index)
        assert history.entries == []

    def test_negative_max_ancestors_rejected(self):
        with pytest.raises(ValueError):
            extract_parent_contexts("alice", "apples", chain_index(), max_ancestors=-1)


class TestCommentContext:
    def test_parent_mismatch_rejected(self):
        parent = make_comment("p", created_utc=10)
        msg = make_comment("m", created_utc=20, parent_id="other")
        with pytest.raises(ValueError):
            CommentContext(msg, parent)

    def test_non_chronological_ancestors_rejected(self):
        parent = make_comment("p", created_utc=50)
        msg = make_comment("m", created_utc=60, parent_id="p")
        a1 = make_comment("a1", created_utc=30)
        a2 = make_comment("a2", created_utc=20)
        with pytest.raises(ValueError):
            CommentContext(msg, parent, (a1, a2))

    def test_parent_not_among_ancestors(self):
        parent = make_comment("p", created_utc=50)
        msg = make_comment("m", created_utc=60, parent_id="p")
        with pytest.raises(ValueError):
            CommentContext(msg, parent, (parent,))


class TestExitOrder:
    def users(self, *pairs):
        return [
            make_comment(f"c{i}", author=author, created_utc=t)
            for i, (author, t) in enumerate(pairs)
        ]

    def test_distinct_times(self):
        records = compute_actual_exit_order(
            self.users(("u1", 10), ("u2", 20), ("u3", 30)), "apples"
        )
        assert [(r.user, r.actual_rank) for r in records] == [("u1", 1.0), ("u2", 2.0), ("u3", 3.0)]

    def test_average_rank_on_ties(self):
        records = compute_actual_exit_order(
            self.users(("u1", 10), ("u2", 10), ("u3", 20)), "apples"
        )
        by_user = {r.user: r.actual_rank for r in records}
        assert by_user == {"u1": 1.5, "u2": 1.5, "u3": 3.0}

    def test_single_user(self):
        records = compute_actual_exit_order(self.users(("solo", 10)), "apples")
        assert [(r.user, r.actual_rank) for r in records] == [("solo", 1.0)]

    def test_last_activity_is_max(self):
        comments = self.users(("u1", 10), ("u1", 50), ("u2", 30))
        records = compute_actual_exit_order(comments, "apples")
        by_user = {r.user: r.last_active_utc for r in records}
        assert by_user == {"u1": 50, "u2": 30}

    def test_other_subreddits_ignored(self):
        comments = self.users(("u1", 10)) + [
            make_comment("zz", author="u2", subreddit="bikes", created_utc=99)
        ]
        records = compute_actual_exit_order(comments, "apples")
        assert [r.user for r in records] == ["u1"]

    def test_empty_subreddit(self):
        assert compute_actual_exit_order([], "apples") == []

    def test_rank_sum_is_valid_ranking(self):
        rng = random.Random(11)
        for _ in range(20):
            n_users = rng.randint(1, 12)
            pairs = [(f"u{i}", rng.randint(1, 6) * 10) for i in range(n_users)]
            records = compute_actual_exit_order(self.users(*pairs), "apples")
            total = sum(r.actual_rank for r in records)
            assert total == pytest.approx(n_users * (n_users + 1) / 2)
