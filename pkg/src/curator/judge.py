"""The judge protocol: instruction rendering, randomized pairwise
presentation, reply parsing with bounded repair, and the human-alignment
evaluation harness.

The judge itself is an abstract client with three interchangeable backends:
a live HTTP service, a recorded-transcript replayer, and a parameterized
synthetic judge (see simulation.SyntheticJudgeClient).  Everything in this
module must keep working against arbitrary reply text: parsers never raise,
they either produce a result or trigger a bounded retry.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from random import Random
from typing import Iterable, Sequence

import requests

from .clock import Clock, SystemClock
from .errors import EmptyInput, JudgeUnavailable, MutationFailed
from .jsonl import append_jsonl, read_jsonl
from .store import ImageHandle, ImageStore

logger = logging.getLogger(__name__)

WINNER_ADVANCED = "advanced"
WINNER_BASE = "base"
WINNER_NONE = "no_decision"

ORDER_ADVANCED_FIRST = "advanced_first"
ORDER_BASE_FIRST = "base_first"

DEFAULT_RETRY_LIMIT = 3
TRANSPORT_ATTEMPTS = 5


def _load_template(name: str) -> str:
    return resources.files("curator.templates").joinpath(name).read_text(encoding="utf-8")


DISCRIMINATION_TEMPLATE = _load_template("discrimination.txt")
EXPANSION_TEMPLATE = _load_template("expansion.txt")
MUTATION_TEMPLATE = _load_template("mutation.txt")
ENHANCED_PROMPT_SUFFIXES: tuple[str, ...] = tuple(
    line for line in _load_template("suffixes.txt").splitlines() if line.strip()
)


def render_discrimination(prompt: str) -> str:
    return DISCRIMINATION_TEMPLATE.replace("{text_prompt}", prompt)


def render_expansion(prompt: str, n: int) -> str:
    return EXPANSION_TEMPLATE.replace("{text_prompt}", prompt).replace("{extend_num}", str(n))


def render_mutation(enhanced_prompt: str) -> str:
    return MUTATION_TEMPLATE.replace("{enhanced_prompt}", enhanced_prompt)


def instruction_hash(instruction: str) -> str:
    return hashlib.sha256(instruction.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------- types


@dataclass(frozen=True)
class JudgeVerdict:
    winner: str
    presented_order: str
    raw_reply: str
    retries_used: int


@dataclass(frozen=True)
class ExpansionResult:
    variations: tuple[str, ...]
    parent_text: str
    retries_used: int = 0


# ------------------------------------------------------------------- parsing

_VERDICT_RE = re.compile(r"\(\s*([ab])\s*\)\s*(?:is\s*)?better")

# Typographic quotes VLMs substitute for straight ones.
_QUOTE_FIXES = str.maketrans({
    "“": '"', "”": '"', "„": '"', "‟": '"',
    "‘": "'", "’": "'", "‚": "'", "‛": "'",
})


def parse_verdict_slot(reply: str) -> str | None:
    """Extract the chosen slot letter ('a' or 'b') from free-form reply text.

    Rule: occurrences of "(A)"/"(B)" adjacent to "better", case-insensitive;
    the reply must settle on a single letter (VLMs often restate the
    question before answering, so both letters appearing means ambiguity).
    Total: never raises on any input string.
    """
    matches = _VERDICT_RE.findall(reply.lower())
    if not matches:
        return None
    last = matches[-1]
    if any(m != last for m in matches):
        return None
    return last


def de_randomize(slot: str, presented_order: str) -> str:
    """Map a slot letter back to which underlying image won."""
    if slot == "a":
        return WINNER_ADVANCED if presented_order == ORDER_ADVANCED_FIRST else WINNER_BASE
    if slot == "b":
        return WINNER_BASE if presented_order == ORDER_ADVANCED_FIRST else WINNER_ADVANCED
    raise ValueError(f"slot must be 'a' or 'b', got {slot!r}")


def parse_string_list(reply: str) -> list[str] | None:
    """Parse a bracketed list of quoted strings out of free-form reply text.

    Tolerates typographic quotes, trailing commas, and prose around the
    list.  Returns None when no list can be recovered.  Never raises.
    """
    text = reply.translate(_QUOTE_FIXES)
    start, end = text.find("["), text.rfind("]")
    if start == -1 or end == -1 or end <= start:
        return None
    segment = text[start:end + 1]
    for candidate in (segment, re.sub(r",\s*\]", "]", segment)):
        try:
            parsed = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, list) and all(isinstance(x, str) for x in parsed):
            return parsed
    items = re.findall(r'"((?:[^"\\]|\\.)*)"', segment)
    return list(items) if items else None


# ------------------------------------------------------------------- clients


class JudgeClient:
    """Abstract judge transport.  All methods return raw reply text."""

    def discriminate_raw(self, prompt: str, image_a: ImageHandle, image_b: ImageHandle,
                         instruction: str) -> str:
        raise NotImplementedError

    def complete(self, instruction: str, kind: str) -> str:
        """kind is "expand" or "mutate" (they are separate wire endpoints)."""
        raise NotImplementedError


class HttpJudgeClient(JudgeClient):
    """Live judge behind the HTTP wire protocol.

    POST /judge/discriminate {prompt, image_a_b64, image_b_b64, instruction} -> {reply}
    POST /judge/expand | /judge/mutate {instruction} -> {reply}
    """

    def __init__(self, endpoint: str, store: ImageStore, auth_token: str | None = None,
                 session: requests.Session | None = None, clock: Clock | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.store = store
        self.auth_token = auth_token
        self._session = session
        self._clock = clock or SystemClock()
        self._timeout = timeout

    def _post(self, path: str, body: dict) -> str:
        session = self._session or requests
        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        delay = 1.0
        last: Exception | None = None
        for attempt in range(1, TRANSPORT_ATTEMPTS + 1):
            try:
                resp = session.post(self.endpoint + path, json=body, headers=headers,
                                    timeout=self._timeout)
                if resp.status_code == 200:
                    return str(resp.json()["reply"])
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = JudgeUnavailable(f"judge HTTP {resp.status_code}")
                else:
                    raise JudgeUnavailable(f"judge HTTP {resp.status_code}: {resp.text[:200]}")
            except requests.RequestException as exc:
                last = exc
            if attempt < TRANSPORT_ATTEMPTS:
                self._clock.sleep(delay)
                delay *= 2.0
        raise JudgeUnavailable(f"judge unreachable after {TRANSPORT_ATTEMPTS} attempts: {last}")

    def discriminate_raw(self, prompt, image_a, image_b, instruction):
        return self._post("/judge/discriminate", {
            "prompt": prompt,
            "image_a_b64": base64.b64encode(self.store.get_bytes(image_a.sha256)).decode(),
            "image_b_b64": base64.b64encode(self.store.get_bytes(image_b.sha256)).decode(),
            "instruction": instruction,
        })

    def complete(self, instruction, kind):
        if kind not in ("expand", "mutate"):
            raise ValueError(f"unknown completion kind {kind!r}")
        return self._post(f"/judge/{kind}", {"instruction": instruction})


class FixtureJudgeClient(JudgeClient):
    """Replays a recorded transcript: JSONL of {instruction_hash, reply}.

    Repeated calls with the same instruction consume recorded replies in
    order (so retry behavior replays faithfully); once drained, the last
    reply repeats.
    """

    def __init__(self, transcript_path: str | Path):
        self._replies: dict[str, deque[str]] = defaultdict(deque)
        self._last: dict[str, str] = {}
        for _, rec in read_jsonl(transcript_path):
            self._replies[rec["instruction_hash"]].append(rec["reply"])
            self._last[rec["instruction_hash"]] = rec["reply"]

    def _reply_for(self, instruction: str) -> str:
        key = instruction_hash(instruction)
        if key not in self._last:
            raise JudgeUnavailable(f"no recorded reply for instruction hash {key[:12]}")
        queue = self._replies[key]
        return queue.popleft() if queue else self._last[key]

    def discriminate_raw(self, prompt, image_a, image_b, instruction):
        return self._reply_for(instruction)

    def complete(self, instruction, kind):
        return self._reply_for(instruction)


class RecordingJudgeClient(JudgeClient):
    """Wraps another client and appends every exchange to a transcript file."""

    def __init__(self, inner: JudgeClient, transcript_path: str | Path):
        self.inner = inner
        self.path = Path(transcript_path)

    def _record(self, instruction: str, reply: str) -> str:
        append_jsonl(self.path, {"instruction_hash": instruction_hash(instruction), "reply": reply})
        return reply

    def discriminate_raw(self, prompt, image_a, image_b, instruction):
        return self._record(instruction, self.inner.discriminate_raw(prompt, image_a, image_b, instruction))

    def complete(self, instruction, kind):
        return self._record(instruction, self.inner.complete(instruction, kind))


# ---------------------------------------------------------------- operations


def discriminate(prompt: str, image_advanced: ImageHandle, image_base: ImageHandle,
                 client: JudgeClient, rng: Random,
                 retry_limit: int = DEFAULT_RETRY_LIMIT) -> JudgeVerdict:
    """Randomized-order pairwise comparison, de-randomized back to a winner.

    The A/B slot assignment is a fair coin drawn once per call; retries
    (unparseable replies) reuse the same presentation so the stored
    presented_order always matches the stored raw_reply.  An unparseable
    reply after the retry limit is a NoDecision outcome, not an error.
    """
    advanced_first = rng.random() < 0.5
    order = ORDER_ADVANCED_FIRST if advanced_first else ORDER_BASE_FIRST
    slot_a, slot_b = (image_advanced, image_base) if advanced_first else (image_base, image_advanced)
    instruction = render_discrimination(prompt)

    reply = ""
    retries = 0
    for _ in range(retry_limit):
        reply = client.discriminate_raw(prompt, slot_a, slot_b, instruction)
        slot = parse_verdict_slot(reply)
        if slot is not None:
            return JudgeVerdict(de_randomize(slot, order), order, reply, retries)
        retries += 1
    return JudgeVerdict(WINNER_NONE, order, reply, retries)


def _valid_prefix(items: Sequence[str], parent_text: str) -> list[str]:
    """Longest leading run of trimmed, non-empty, mutually distinct items
    that also differ from the parent text."""
    out: list[str] = []
    seen = {parent_text.strip()}
    for item in items:
        text = item.strip()
        if not text or text in seen:
            break
        out.append(text)
        seen.add(text)
    return out


def expand(prompt: str, n: int, client: JudgeClient,
           retry_limit: int = DEFAULT_RETRY_LIMIT) -> ExpansionResult:
    """Ask the judge for n noun-substituted variations of a prompt.

    A reply is accepted only if it parses to exactly n valid, distinct,
    non-parent strings; otherwise the same instruction is retried.  After
    the retry limit, the longest valid prefix seen is returned (possibly
    shorter than n) with a warning.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    instruction = render_expansion(prompt, n)
    best: list[str] = []
    retries = 0
    for _ in range(retry_limit):
        reply = client.complete(instruction, kind="expand")
        items = parse_string_list(reply) or []
        prefix = _valid_prefix(items, prompt)
        if len(prefix) == n and len(items) == n:
            return ExpansionResult(tuple(prefix), prompt, retries)
        if len(prefix) > len(best):
            best = prefix
        retries += 1
    logger.warning("expansion of %r yielded %d/%d variations after %d attempts",
                   prompt, len(best), n, retry_limit)
    return ExpansionResult(tuple(best), prompt, retries)


def mutate(client: JudgeClient, rng: Random,
           retry_limit: int = DEFAULT_RETRY_LIMIT) -> str:
    """Ask the judge for one brand-new prompt, unrelated to anything seen.

    One of the four enhanced-prompt suffixes is sampled uniformly; the reply
    must parse as a single-element list.
    """
    suffix = ENHANCED_PROMPT_SUFFIXES[rng.randrange(len(ENHANCED_PROMPT_SUFFIXES))]
    instruction = render_mutation(suffix)
    for _ in range(retry_limit):
        reply = client.complete(instruction, kind="mutate")
        items = parse_string_list(reply)
        if items is not None and len(items) == 1 and items[0].strip():
            return items[0].strip()
    raise MutationFailed(f"no parseable mutation after {retry_limit} attempts")


# ------------------------------------------------------- alignment harness


def verdict_matches_label(verdict: JudgeVerdict, human_label: str) -> bool:
    """Does the de-randomized verdict agree with the human slot label (A/B)?

    NoDecision never matches.
    """
    label = human_label.strip().lower()
    if label not in ("a", "b"):
        raise ValueError(f"human label must be 'A' or 'B', got {human_label!r}")
    if verdict.winner == WINNER_NONE:
        return False
    return de_randomize(label, verdict.presented_order) == verdict.winner


def evaluate_alignment(judgments: Iterable[tuple[JudgeVerdict, str]]) -> float:
    """Fraction of verdicts agreeing with the human majority label."""
    judgments = list(judgments)
    if not judgments:
        raise EmptyInput("no judgments to evaluate")
    correct = sum(1 for verdict, label in judgments if verdict_matches_label(verdict, label))
    return correct / len(judgments)


def generate_alignment_fixtures(judges: dict[str, float], n_pairs: int,
                                seed: int) -> list[dict]:
    """Synthesize an alignment fixture set: per judge, n_pairs rows of
    {judge, prompt, human_label, presented_order, reply, quality_a, quality_b}.

    The human label marks the truly higher-quality slot; a judge of accuracy
    p picks that slot with probability p.  An optional ``scores`` dict per
    row is accepted by the evaluator and echoed into reports (a recording
    hook for human-assigned 1-5 expansion scores; nothing here fills it in).
    """
    rng = Random(seed)
    rows: list[dict] = []
    for judge_name, accuracy in judges.items():
        for i in range(n_pairs):
            quality_a = round(rng.uniform(0.1, 0.95), 6)
            quality_b = round(min(1.0, quality_a + rng.uniform(0.02, 0.3)), 6)
            if rng.random() < 0.5:
                quality_a, quality_b = quality_b, quality_a
            human_label = "A" if quality_a > quality_b else "B"
            presented_order = ORDER_ADVANCED_FIRST if rng.random() < 0.5 else ORDER_BASE_FIRST
            chosen = human_label if rng.random() < accuracy else ("B" if human_label == "A" else "A")
            rows.append({
                "judge": judge_name,
                "prompt": f"alignment pair {i}",
                "quality_a": quality_a,
                "quality_b": quality_b,
                "human_label": human_label,
                "presented_order": presented_order,
                "reply": f"({chosen}) is better",
            })
    return rows


def evaluate_fixture_rows(rows: Iterable[dict]) -> dict[str, dict]:
    """Per-judge discrimination accuracy over recorded fixture rows."""
    grouped: dict[str, list[tuple[JudgeVerdict, str]]] = defaultdict(list)
    for rec in rows:
        slot = parse_verdict_slot(rec["reply"])
        order = rec["presented_order"]
        winner = de_randomize(slot, order) if slot is not None else WINNER_NONE
        verdict = JudgeVerdict(winner, order, rec["reply"], 0)
        grouped[rec["judge"]].append((verdict, rec["human_label"]))
    if not grouped:
        raise EmptyInput("fixture set is empty")
    return {
        judge: {"discrimination": evaluate_alignment(pairs), "pairs": len(pairs)}
        for judge, pairs in grouped.items()
    }
