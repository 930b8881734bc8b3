"""End-to-end orchestration behind the CLI commands.

Wires ingest -> scoring -> bias -> gravity -> metrics over a config, and
owns every report format: bias JSONL, force CSV, evaluation CSV,
diagnostics JSONL, calibration JSON. All artifacts are written in sorted
deterministic order so mock-backed runs are byte-stable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bias import BiasScore, compute_user_bias
from .config import AnalysisConfig, ConfigError
from .embedding import Embedder, EmbeddingCache, MockEmbedder, RemoteEmbedder
from .gravity import (
    AnalysisError,
    PullForce,
    SubgroupModel,
    ideological_distance,
    pull_force,
    simulate_exit_order,
    subgroup_centroid,
    subgroup_mass,
    user_embedding,
)
from .ingest import (
    Comment,
    ParseResult,
    ThreadIndex,
    UserHistory,
    build_threads,
    compute_actual_exit_order,
    extract_parent_contexts,
    load_comments,
)
from .metrics import (
    INSUFFICIENT_DATA_MARKER,
    CalibrationSample,
    SubredditEvaluation,
    evaluate_subreddit,
    kappa_band,
    normalized_mae,
    quadratic_weighted_kappa,
)
from .scoring import MockScorer, RemoteScorer, ScoreCache, ScoreKind, ScoreLevel, ScorerBackend

BIAS_REPORT = "bias.jsonl"
FORCE_TABLE = "forces.csv"
EVALUATION_REPORT = "evaluation.csv"
DIAGNOSTICS = "diagnostics.jsonl"
CALIBRATION_REPORT = "calibration.json"

_FORCE_COLUMNS = ["user", "subreddit", "m_a", "d", "f_w", "predicted_rank"]
_EVALUATION_COLUMNS = ["subreddit", "n_common", "spearman_rho", "p_value"]


class PipelineError(Exception):
    pass


@dataclass
class CorpusBundle:
    comments: list[Comment]
    parse: ParseResult
    index: ThreadIndex
    subreddits: list[str]
    files: int


def load_corpus(config: AnalysisConfig) -> CorpusBundle:
    if not config.inputs:
        raise ConfigError("config.input is required")
    comments: list[Comment] = []
    malformed = 0
    dropped = 0
    for path in config.inputs:
        result = load_comments(path)
        comments.extend(result.comments)
        malformed += result.malformed
        dropped += result.dropped
    index = build_threads(comments)
    subreddits = list(config.subreddits) or sorted({c.subreddit for c in comments})
    parse = ParseResult(comments=comments, malformed=malformed, dropped=dropped)
    return CorpusBundle(
        comments=comments,
        parse=parse,
        index=index,
        subreddits=subreddits,
        files=len(config.inputs),
    )


def corpus_summary(bundle: CorpusBundle) -> dict[str, Any]:
    per_subreddit: dict[str, Any] = {}
    for sub in bundle.subreddits:
        members = [c for c in bundle.comments if c.subreddit == sub]
        per_subreddit[sub] = {
            "comments": len(members),
            "users": len({c.author for c in members}),
            "threads": len({bundle.index.thread_of[c.id] for c in members}),
            "orphans": sum(1 for c in members if c.id in bundle.index.orphans),
        }
    return {
        "files": bundle.files,
        "comments": len(bundle.comments),
        "malformed": bundle.parse.malformed,
        "dropped": bundle.parse.dropped,
        "subreddits": per_subreddit,
    }


def make_scorer(config: AnalysisConfig) -> ScorerBackend:
    if config.scorer.backend == "mock":
        return MockScorer()
    return RemoteScorer(config.scorer.base_url, config.scorer.model)


def make_embedder(config: AnalysisConfig) -> Embedder:
    if config.embedder.backend == "mock":
        return MockEmbedder(dim=config.embedder.dim)
    return RemoteEmbedder(config.embedder.base_url, config.embedder.model, config.embedder.dim)


@dataclass
class SubredditAnalysis:
    subreddit: str
    users: list[str]
    histories: dict[str, UserHistory]
    bias_scores: dict[str, BiasScore]
    model: SubgroupModel | None = None
    forces: list[PullForce] = field(default_factory=list)
    predicted_ranks: dict[str, float] = field(default_factory=dict)
    skipped_users: list[str] = field(default_factory=list)
    error: str | None = None


def analyze_subreddit(
    bundle: CorpusBundle,
    subreddit: str,
    config: AnalysisConfig,
    scorer: ScorerBackend,
    score_cache: ScoreCache | None,
    embedder: Embedder | None = None,
    embedding_cache: EmbeddingCache | None = None,
    *,
    with_forces: bool = True,
) -> SubredditAnalysis:
    """Bias (and optionally force) analysis of one subreddit.

    Per-user scoring failures and non-embeddable users are recorded and
    skipped; only a subreddit with no users at all is an error upstream.
    """
    members = [c for c in bundle.comments if c.subreddit == subreddit]
    users = sorted({c.author for c in members})

    histories: dict[str, UserHistory] = {}
    bias_scores: dict[str, BiasScore] = {}
    for user in users:
        history = extract_parent_contexts(user, subreddit, bundle.index, config.max_ancestors)
        histories[user] = history
        bias_scores[user] = compute_user_bias(
            history,
            scorer,
            score_cache,
            pair_cap=config.pair_cap,
            seed=config.seed,
            max_in_flight=config.scorer.max_in_flight,
            retries=config.scorer.retries,
        )

    analysis = SubredditAnalysis(
        subreddit=subreddit, users=users, histories=histories, bias_scores=bias_scores
    )
    if not with_forces:
        return analysis
    if embedder is None:
        raise PipelineError("force analysis needs an embedder")

    try:
        mass = subgroup_mass(members, subreddit)
        centroid = subgroup_centroid(
            members,
            config.top_k,
            embedder,
            embedding_cache,
            max_in_flight=config.embedder.max_in_flight,
            retries=config.embedder.retries,
        )
    except AnalysisError as exc:
        analysis.error = str(exc)
        return analysis

    model = SubgroupModel(
        subreddit=subreddit,
        mass=mass,
        centroid=centroid,
        tm=config.tm_for(subreddit),
        tsm=config.tsm_for(subreddit),
        top_k=config.top_k,
    )
    analysis.model = model

    for user in users:
        history = histories[user]
        if not history.entries:
            analysis.skipped_users.append(user)
            continue
        try:
            vec = user_embedding(
                history,
                embedder,
                embedding_cache,
                max_in_flight=config.embedder.max_in_flight,
                retries=config.embedder.retries,
            )
        except AnalysisError:
            analysis.skipped_users.append(user)
            continue
        d = ideological_distance(vec, model.centroid)
        m_user = bias_scores[user].m_a
        analysis.forces.append(
            PullForce(user=user, subreddit=subreddit, m_user=m_user, d=d, f_w=pull_force(model, m_user, d))
        )
    analysis.predicted_ranks = simulate_exit_order(analysis.forces, config.exit_direction)
    return analysis


def evaluate_analyses(
    bundle: CorpusBundle, analyses: list[SubredditAnalysis]
) -> list[SubredditEvaluation]:
    evaluations = []
    for analysis in analyses:
        actual = {
            r.user: r.actual_rank
            for r in compute_actual_exit_order(bundle.comments, analysis.subreddit)
        }
        evaluations.append(
            evaluate_subreddit(analysis.subreddit, analysis.predicted_ranks, actual)
        )
    return evaluations


# ---------------------------------------------------------------------------
# Report writing and reading


def _write_jsonl(path: Path, records: list[dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True, separators=(", ", ": ")) + "\n")


def write_bias_report(path: Path, analyses: list[SubredditAnalysis]) -> None:
    records = []
    for analysis in analyses:
        for user in analysis.users:
            score = analysis.bias_scores[user]
            records.append(
                {
                    "user": score.user,
                    "subreddit": score.subreddit,
                    "n": score.n,
                    "pair_count": score.pair_count,
                    "m_unweighted": score.m_unweighted,
                    "m_a": score.m_a,
                    "failures": score.failures,
                }
            )
    _write_jsonl(path, records)


def write_force_table(path: Path, analyses: list[SubredditAnalysis]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_FORCE_COLUMNS)
        for analysis in analyses:
            for force in analysis.forces:
                writer.writerow(
                    [
                        force.user,
                        force.subreddit,
                        repr(force.m_user),
                        repr(force.d),
                        repr(force.f_w),
                        repr(analysis.predicted_ranks[force.user]),
                    ]
                )


def read_force_table(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        raise PipelineError(f"force table not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != _FORCE_COLUMNS:
            raise PipelineError(f"unexpected force table columns in {path}: {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "user": row["user"],
                    "subreddit": row["subreddit"],
                    "m_a": float(row["m_a"]),
                    "d": float(row["d"]),
                    "f_w": float(row["f_w"]),
                    "predicted_rank": float(row["predicted_rank"]),
                }
            )
        return rows


def write_evaluation_report(path: Path, evaluations: list[SubredditEvaluation]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_EVALUATION_COLUMNS)
        for ev in evaluations:
            if ev.insufficient:
                writer.writerow(
                    [ev.subreddit, ev.n_common, INSUFFICIENT_DATA_MARKER, INSUFFICIENT_DATA_MARKER]
                )
            else:
                writer.writerow([ev.subreddit, ev.n_common, repr(ev.rho), repr(ev.p_value)])


def read_evaluation_report(path: Path) -> list[SubredditEvaluation]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != _EVALUATION_COLUMNS:
            raise PipelineError(f"unexpected evaluation columns in {path}: {reader.fieldnames}")
        out = []
        for row in reader:
            insufficient = row["spearman_rho"] == INSUFFICIENT_DATA_MARKER
            out.append(
                SubredditEvaluation(
                    subreddit=row["subreddit"],
                    n_common=int(row["n_common"]),
                    rho=None if insufficient else float(row["spearman_rho"]),
                    p_value=None if insufficient else float(row["p_value"]),
                )
            )
        return out


def write_diagnostics(path: Path, bundle: CorpusBundle, analyses: list[SubredditAnalysis]) -> None:
    records: list[dict[str, Any]] = [
        {
            "record": "parse",
            "files": bundle.files,
            "comments": len(bundle.comments),
            "malformed": bundle.parse.malformed,
            "dropped": bundle.parse.dropped,
        }
    ]
    for analysis in analyses:
        records.append(
            {
                "record": "subreddit",
                "subreddit": analysis.subreddit,
                "users": len(analysis.users),
                "users_with_history": sum(1 for h in analysis.histories.values() if h.entries),
                "forced_users": len(analysis.forces),
                "skipped_users": analysis.skipped_users,
                "error": analysis.error,
            }
        )
        for user in analysis.users:
            score = analysis.bias_scores[user]
            if score.failures:
                records.append(
                    {
                        "record": "user_failures",
                        "subreddit": analysis.subreddit,
                        "user": user,
                        "failed_supports": score.failed_supports,
                        "failed_pairs": score.failed_pairs,
                    }
                )
    _write_jsonl(path, records)


# ---------------------------------------------------------------------------
# Commands


@dataclass
class RunResult:
    out_dir: Path
    artifacts: dict[str, Path]
    summary: dict[str, Any]
    scorer_calls: int = 0
    embedder_calls: int = 0


def _run_stages(
    config: AnalysisConfig,
    *,
    with_forces: bool,
    with_evaluation: bool,
    scorer: ScorerBackend | None = None,
    embedder: Embedder | None = None,
) -> RunResult:
    bundle = load_corpus(config)
    scorer = scorer if scorer is not None else make_scorer(config)
    embedder = embedder if embedder is not None else (make_embedder(config) if with_forces else None)
    score_cache = ScoreCache(config.score_cache)
    embedding_cache = EmbeddingCache(config.embedding_cache)

    analyses = [
        analyze_subreddit(
            bundle,
            sub,
            config,
            scorer,
            score_cache,
            embedder,
            embedding_cache,
            with_forces=with_forces,
        )
        for sub in bundle.subreddits
    ]

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    bias_path = out_dir / BIAS_REPORT
    write_bias_report(bias_path, analyses)
    artifacts["bias"] = bias_path

    if with_forces:
        force_path = out_dir / FORCE_TABLE
        write_force_table(force_path, analyses)
        artifacts["forces"] = force_path

    if with_evaluation:
        evaluation_path = out_dir / EVALUATION_REPORT
        write_evaluation_report(evaluation_path, evaluate_analyses(bundle, analyses))
        artifacts["evaluation"] = evaluation_path

    diagnostics_path = out_dir / DIAGNOSTICS
    write_diagnostics(diagnostics_path, bundle, analyses)
    artifacts["diagnostics"] = diagnostics_path

    summary = {
        "subreddits": len(bundle.subreddits),
        "users_scored": sum(len(a.users) for a in analyses),
        "forces": sum(len(a.forces) for a in analyses),
        "artifacts": {name: str(path) for name, path in sorted(artifacts.items())},
    }
    return RunResult(
        out_dir=out_dir,
        artifacts=artifacts,
        summary=summary,
        scorer_calls=scorer.calls,
        embedder_calls=embedder.calls if embedder is not None else 0,
    )


def cmd_ingest(config: AnalysisConfig) -> dict[str, Any]:
    return corpus_summary(load_corpus(config))


def cmd_bias(
    config: AnalysisConfig, *, scorer: ScorerBackend | None = None
) -> RunResult:
    return _run_stages(config, with_forces=False, with_evaluation=False, scorer=scorer)


def cmd_simulate(
    config: AnalysisConfig,
    *,
    scorer: ScorerBackend | None = None,
    embedder: Embedder | None = None,
) -> RunResult:
    return _run_stages(
        config, with_forces=True, with_evaluation=False, scorer=scorer, embedder=embedder
    )


def cmd_run(
    config: AnalysisConfig,
    *,
    scorer: ScorerBackend | None = None,
    embedder: Embedder | None = None,
) -> RunResult:
    return _run_stages(
        config, with_forces=True, with_evaluation=True, scorer=scorer, embedder=embedder
    )


def cmd_evaluate(config: AnalysisConfig) -> RunResult:
    """Correlate a previously written force table against observed exit orders."""
    bundle = load_corpus(config)
    out_dir = Path(config.out_dir)
    rows = read_force_table(out_dir / FORCE_TABLE)

    by_subreddit: dict[str, dict[str, float]] = {}
    for row in rows:
        by_subreddit.setdefault(row["subreddit"], {})[row["user"]] = row["predicted_rank"]

    evaluations = []
    for sub in bundle.subreddits:
        predicted = by_subreddit.get(sub, {})
        actual = {
            r.user: r.actual_rank for r in compute_actual_exit_order(bundle.comments, sub)
        }
        evaluations.append(evaluate_subreddit(sub, predicted, actual))

    evaluation_path = out_dir / EVALUATION_REPORT
    write_evaluation_report(evaluation_path, evaluations)
    summary = {
        "subreddits": len(evaluations),
        "evaluated": sum(1 for ev in evaluations if not ev.insufficient),
        "artifacts": {"evaluation": str(evaluation_path)},
    }
    return RunResult(out_dir=out_dir, artifacts={"evaluation": evaluation_path}, summary=summary)


def load_calibration_labels(path: str | Path) -> list[CalibrationSample]:
    """Read human/model label pairs from a JSONL file of {kind, human, ai}."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise PipelineError(f"cannot read calibration labels {path}: {exc}") from exc
    samples: list[CalibrationSample] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            kind = ScoreKind(str(record["kind"]))
            human = ScoreLevel(float(record["human"]))
            ai = ScoreLevel(float(record["ai"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise PipelineError(f"bad calibration label at {path}:{lineno}: {exc}") from exc
        samples.append(CalibrationSample(human=human, ai=ai, kind=kind))
    if not samples:
        raise PipelineError(f"no calibration samples in {path}")
    return samples


def cmd_calibrate(config: AnalysisConfig, labels_path: str | Path) -> dict[str, Any]:
    samples = load_calibration_labels(labels_path)
    report = []
    for kind in sorted({s.kind for s in samples}, key=lambda k: k.value):
        subset = [s for s in samples if s.kind is kind]
        qwk = quadratic_weighted_kappa(subset)
        report.append(
            {
                "kind": kind.value,
                "n": len(subset),
                "qwk": qwk,
                "nmae": normalized_mae(subset),
                "band": kappa_band(qwk),
            }
        )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / CALIBRATION_REPORT
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return {"report": report, "artifacts": {"calibration": str(path)}}
