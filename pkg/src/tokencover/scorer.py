"""Importance scorers and the content-addressed score cache.

A scorer maps a tokenized question to per-token importance scores in [0, 1].
Built-in kinds: a noisy oracle around the ground truth, a seeded uniform
scorer, a constant scorer, a lookup table, and a remote HTTP scorer with a
persistent disk cache. Stochastic kinds derive all randomness from their seed
and the content being scored, never from global state, so repeated calls are
reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Any, Iterable, Mapping, Sequence

from .core import CalibrationExample, Dataset, ImportanceScores, TokenizedQuestion

ScoreCacheKey = str

SCORER_KINDS = ("oracle_noise", "uniform_random", "constant", "remote")

_NORMAL = NormalDist()


class ScorerError(ValueError):
    """Raised for invalid scorer configuration or unusable scorer output."""


def cache_key(prompt: str, tokens: Sequence[str], scorer_identity: str) -> ScoreCacheKey:
    """Collision-resistant digest of (prompt, tokens, scorer identity).

    Any change to the prompt, any token, the token order, or the scorer
    identity yields a different key.
    """
    payload = json.dumps(
        [prompt, list(tokens), scorer_identity], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _unit_uniform(material: str) -> float:
    """Deterministic uniform draw in (0, 1) from a string."""
    h = hashlib.sha256(material.encode("utf-8")).digest()
    return (int.from_bytes(h[:8], "big") + 0.5) / 2.0**64


def _gauss(material: str) -> float:
    return _NORMAL.inv_cdf(_unit_uniform(material))


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


@dataclass(frozen=True)
class ScorerSpec:
    """Declarative scorer configuration.

    ``kind`` is one of SCORER_KINDS; ``parameters`` holds kind-specific
    settings (``sigma`` for oracle_noise, ``value`` for constant,
    ``endpoint``/``timeout``/``retries`` for remote). ``seed`` drives every
    stochastic kind.
    """

    kind: str
    parameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0


class _ScorerBase:
    """Shared bookkeeping: evaluation and cache-hit counters."""

    identity: str = "?"
    context_free: bool = False

    def __init__(self) -> None:
        self.calls = 0
        self.cache_hits = 0

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        raise NotImplementedError

    def score_token(self, question: TokenizedQuestion, position: int, token: str) -> float:
        """Score one (position, token) pair independent of the other tokens.

        Only defined for context-free scorers, where the score of a token
        does not depend on the rest of the question.
        """
        raise ScorerError(f"scorer {self.identity!r} is not context-free")


def oracle_noise_score(
    truth_indices: Iterable[int],
    tokens: Sequence[str],
    sigma: float,
    seed: int,
) -> ImportanceScores:
    """Noisy-oracle scores: 1 on ground-truth positions, 0 elsewhere, plus
    Gaussian noise of scale ``sigma``, clamped back into [0, 1].

    The noise at position j is a deterministic function of
    (seed, j, token at j), so re-scoring the same content reproduces the same
    values and the score of a token never depends on the other positions.
    """
    if sigma < 0:
        raise ScorerError(f"sigma must be >= 0, got {sigma}")
    truth = frozenset(int(i) for i in truth_indices)
    k = len(tokens)
    for j in truth:
        if not 0 <= j < k:
            raise ScorerError(f"ground-truth index {j} outside [0, {k})")
    values = []
    for j, tok in enumerate(tokens):
        base = 1.0 if j in truth else 0.0
        if sigma > 0:
            base += sigma * _gauss(f"{seed}|{j}|{tok}")
        values.append(_clamp01(base))
    return ImportanceScores(tuple(values))


class OracleNoiseScorer(_ScorerBase):
    """Scores ground-truth positions near 1 and the rest near 0.

    Needs the ground truth for every question it will see, keyed by question
    id. Context-free: the score at position j depends only on (seed, j,
    token string) and whether j is a truth position.
    """

    context_free = True

    def __init__(self, sigma: float, seed: int, truth_by_id: Mapping[str, Iterable[int]]):
        super().__init__()
        if sigma < 0:
            raise ScorerError(f"sigma must be >= 0, got {sigma}")
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.truth_by_id = {qid: frozenset(int(i) for i in idx) for qid, idx in truth_by_id.items()}
        self.identity = f"oracle_noise(sigma={self.sigma!r},seed={self.seed})"

    def _truth(self, question_id: str) -> frozenset[int]:
        try:
            return self.truth_by_id[question_id]
        except KeyError:
            raise ScorerError(
                f"oracle scorer has no ground truth for question id {question_id!r}"
            ) from None

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        self.calls += 1
        return oracle_noise_score(self._truth(question.id), question.tokens, self.sigma, self.seed)

    def score_token(self, question: TokenizedQuestion, position: int, token: str) -> float:
        self.calls += 1
        base = 1.0 if position in self._truth(question.id) else 0.0
        if self.sigma > 0:
            base += self.sigma * _gauss(f"{self.seed}|{position}|{token}")
        return _clamp01(base)


class ConstantScorer(_ScorerBase):
    """Every token gets the same score."""

    context_free = True

    def __init__(self, value: float):
        super().__init__()
        if not 0.0 <= value <= 1.0:
            raise ScorerError(f"constant value must be in [0, 1], got {value}")
        self.value = float(value)
        self.identity = f"constant(value={self.value!r})"

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        self.calls += 1
        return ImportanceScores((self.value,) * len(question.tokens))

    def score_token(self, question: TokenizedQuestion, position: int, token: str) -> float:
        self.calls += 1
        return self.value


class UniformRandomScorer(_ScorerBase):
    """Independent uniform scores, keyed on the whole question.

    Context-dependent by construction: editing any token redraws every
    position's score, which makes this a useful stand-in for scorers whose
    output shifts with context.
    """

    context_free = False

    def __init__(self, seed: int):
        super().__init__()
        self.seed = int(seed)
        self.identity = f"uniform_random(seed={self.seed})"

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        self.calls += 1
        key = cache_key(question.prompt, question.tokens, self.identity)
        values = tuple(_unit_uniform(f"{self.seed}|{key}|{j}") for j in range(len(question.tokens)))
        return ImportanceScores(values)


class TableScorer(_ScorerBase):
    """Deterministic lookup table from token tuples to score vectors."""

    context_free = False

    def __init__(self, table: Mapping[Sequence[str], Sequence[float]], identity: str = "table"):
        super().__init__()
        self.table = {tuple(toks): tuple(float(v) for v in vals) for toks, vals in table.items()}
        self.identity = identity

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        self.calls += 1
        try:
            values = self.table[question.tokens]
        except KeyError:
            raise ScorerError(
                f"table scorer {self.identity!r} has no entry for tokens {question.tokens!r}"
            ) from None
        _validate_score_values(values, len(question.tokens), self.identity)
        return ImportanceScores(values)


class ScoreCache:
    """Persistent content-addressed score cache: one JSON file per key.

    Writes go through a temp file and an atomic rename, so concurrent readers
    never observe partial content. I/O failures degrade to uncached operation
    with a warning instead of failing the scoring call.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            warnings.warn(f"score cache at {self.root} unavailable ({e}); running uncached")

    def _path(self, key: ScoreCacheKey) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: ScoreCacheKey) -> tuple[float, ...] | None:
        try:
            raw = self._path(key).read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        except OSError as e:
            warnings.warn(f"score cache read failed for {key[:12]}… ({e}); treating as miss")
            return None
        try:
            rec = json.loads(raw)
            return tuple(float(v) for v in rec["scores"])
        except (ValueError, KeyError, TypeError) as e:
            warnings.warn(f"score cache entry {key[:12]}… is corrupt ({e}); treating as miss")
            return None

    def put(self, key: ScoreCacheKey, scores: Sequence[float]) -> None:
        payload = json.dumps({"scores": list(scores)})
        try:
            fd, tmp = tempfile.mkstemp(dir=str(self.root), suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, self._path(key))
        except OSError as e:
            warnings.warn(f"score cache write failed for {key[:12]}… ({e}); continuing uncached")


def _validate_score_values(values: Sequence[float], k: int, identity: str) -> None:
    if len(values) != k:
        raise ScorerError(
            f"scorer {identity!r} returned {len(values)} scores for {k} tokens"
        )
    for j, v in enumerate(values):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v != v:
            raise ScorerError(f"scorer {identity!r} returned non-numeric score at position {j}")
        if not 0.0 <= v <= 1.0:
            raise ScorerError(
                f"scorer {identity!r} returned score {v!r} outside [0, 1] at position {j}"
            )


class RemoteScorer(_ScorerBase):
    """HTTP scorer: POST {"prompt", "tokens"} and expect {"scores": [...]}.

    Reads the API key from the SCORER_API_KEY environment variable when set.
    Failed requests retry with exponential backoff; responses are validated
    for length and range, and validated scores are memoized in memory and in
    an optional on-disk cache. In-flight requests are bounded so batch
    prediction cannot stampede the endpoint.
    """

    context_free = False

    def __init__(
        self,
        endpoint: str,
        timeout: float = 10.0,
        retries: int = 3,
        cache_dir: str | Path | None = None,
        max_inflight: int = 8,
        backoff: float = 0.25,
    ):
        super().__init__()
        if not endpoint:
            raise ScorerError("remote scorer requires a non-empty endpoint")
        if retries < 0:
            raise ScorerError(f"retries must be >= 0, got {retries}")
        self.endpoint = endpoint
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.backoff = float(backoff)
        self.identity = f"remote({endpoint})"
        self.disk_cache = ScoreCache(cache_dir) if cache_dir is not None else None
        self._memo: dict[ScoreCacheKey, tuple[float, ...]] = {}
        self._gate = threading.Semaphore(max(1, int(max_inflight)))
        self._lock = threading.Lock()

    def _request(self, question: TokenizedQuestion) -> list[Any]:
        import requests

        headers = {}
        api_key = os.environ.get("SCORER_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {"prompt": question.prompt, "tokens": list(question.tokens)}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt > 0:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(
                        self.endpoint, json=body, headers=headers, timeout=self.timeout
                    )
                resp.raise_for_status()
                payload = resp.json()
            except Exception as e:  # noqa: BLE001 - every transport failure retries
                last_error = e
                continue
            if not isinstance(payload, dict) or "scores" not in payload:
                raise ScorerError(
                    f"remote scorer {self.endpoint!r} returned a payload without 'scores'"
                )
            return payload["scores"]
        raise ScorerError(
            f"remote scorer {self.endpoint!r} failed after {self.retries + 1} attempts: {last_error}"
        )

    def score_question(self, question: TokenizedQuestion) -> ImportanceScores:
        key = cache_key(question.prompt, question.tokens, self.identity)
        with self._lock:
            if key in self._memo:
                self.cache_hits += 1
                return ImportanceScores(self._memo[key])
        if self.disk_cache is not None:
            cached = self.disk_cache.get(key)
            if cached is not None:
                _validate_score_values(cached, len(question.tokens), self.identity)
                with self._lock:
                    self._memo[key] = cached
                    self.cache_hits += 1
                return ImportanceScores(cached)
        raw = self._request(question)
        if not isinstance(raw, list):
            raise ScorerError(f"scorer {self.identity!r} returned non-list scores")
        _validate_score_values(raw, len(question.tokens), self.identity)
        values = tuple(float(v) for v in raw)
        with self._lock:
            self.calls += 1
            self._memo[key] = values
        if self.disk_cache is not None:
            self.disk_cache.put(key, values)
        return ImportanceScores(values)


def truth_map(dataset: Dataset | Iterable[CalibrationExample]) -> dict[str, frozenset[int]]:
    """Ground-truth lookup (question id -> explanation indices) for the oracle."""
    examples = dataset.examples if isinstance(dataset, Dataset) else dataset
    return {ex.question.id: frozenset(ex.explanation.indices) for ex in examples}


_ALLOWED_PARAMS = {
    "oracle_noise": {"sigma", "truth_by_id"},
    "uniform_random": set(),
    "constant": {"value"},
    "remote": {"endpoint", "timeout", "retries", "max_inflight", "backoff"},
}


def make_scorer(
    spec: ScorerSpec,
    truth_by_id: Mapping[str, Iterable[int]] | None = None,
    cache_dir: str | Path | None = None,
) -> _ScorerBase:
    """Build a scorer instance from a declarative spec.

    ``truth_by_id`` supplies the oracle's ground truth when it is not already
    in ``spec.parameters``; ``cache_dir`` enables the remote scorer's disk
    cache.
    """
    if spec.kind not in SCORER_KINDS:
        raise ScorerError(f"unknown scorer kind {spec.kind!r}; expected one of {SCORER_KINDS}")
    params = dict(spec.parameters)
    unknown = set(params) - _ALLOWED_PARAMS[spec.kind]
    if unknown:
        raise ScorerError(f"unknown parameter(s) {sorted(unknown)} for scorer kind {spec.kind!r}")
    if spec.kind == "oracle_noise":
        truth = params.get("truth_by_id", truth_by_id)
        if truth is None:
            raise ScorerError("oracle_noise scorer requires ground truth (truth_by_id)")
        return OracleNoiseScorer(params.get("sigma", 0.0), spec.seed, truth)
    if spec.kind == "uniform_random":
        return UniformRandomScorer(spec.seed)
    if spec.kind == "constant":
        if "value" not in params:
            raise ScorerError("constant scorer requires parameter 'value'")
        return ConstantScorer(params["value"])
    return RemoteScorer(
        endpoint=params.get("endpoint", ""),
        timeout=params.get("timeout", 10.0),
        retries=params.get("retries", 3),
        cache_dir=cache_dir,
        max_inflight=params.get("max_inflight", 8),
        backoff=params.get("backoff", 0.25),
    )


def score(
    spec: ScorerSpec,
    question: TokenizedQuestion,
    truth_by_id: Mapping[str, Iterable[int]] | None = None,
    cache_dir: str | Path | None = None,
) -> ImportanceScores:
    """One-shot scoring convenience around make_scorer."""
    return make_scorer(spec, truth_by_id=truth_by_id, cache_dir=cache_dir).score_question(question)
