"""The checking-epoch state machine.

Every checking epoch the director samples a subset of the dynamic dataset,
has the judge compare each sample's stored advanced image against a fresh
base-model render, and then: expands prompts the base model lost (new
variations, each generated by every backend and reduced to one image by a
best-of-K knockout), deletes prompts the base model matched, and with a
small per-sample probability mutates in a brand-new prompt.  All staged
changes commit as one dataset transaction; every action lands in the
decision log.

Failure policy: judge or backend trouble for one prompt is recorded in the
epoch report and never aborts the epoch.  A judge NoDecision costs nothing:
the sample is retained, nothing is expanded or deleted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from random import Random
from typing import Protocol, Sequence

from . import judge as judge_mod
from .backends import GeneratorService
from .buckets import BucketSpec, sample_bucket
from .dataset import (
    ACTION_EXPAND,
    ACTION_MUTATE,
    ACTION_SELECT,
    DynamicDataset,
    Lineage,
    Prompt,
    Sample,
    StagedEvent,
)
from .errors import AllBackendsFailed, BudgetExceeded, JudgeUnavailable, MutationFailed
from .store import ImageHandle

logger = logging.getLogger(__name__)

REASON_MATCHED = "matched_by_base"


class BaseModelPort(Protocol):
    """What the director needs from the trainer: render a prompt at a size."""

    def render(self, prompt: str, bucket: BucketSpec, seed: int = 0) -> ImageHandle: ...


@dataclass
class DirectorConfig:
    select_ratio: float = 0.20
    extension_count: int = 3
    mutation_rate: float = 0.10
    checking_interval: int = 100
    dataset_cap: int = 100_000
    budget: Decimal | None = None
    # Ablation switches; the canonical loop runs with both enabled.
    enable_discrimination: bool = True
    enable_expansion: bool = True

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        if not 0 < self.select_ratio <= 1:
            problems.append(f"select_ratio must be in (0, 1], got {self.select_ratio}")
        if self.extension_count < 1:
            problems.append(f"extension_count must be >= 1, got {self.extension_count}")
        if not 0 <= self.mutation_rate <= 1:
            problems.append(f"mutation_rate must be in [0, 1], got {self.mutation_rate}")
        if self.checking_interval < 1:
            problems.append(f"checking_interval must be >= 1, got {self.checking_interval}")
        if self.dataset_cap < 1:
            problems.append(f"dataset_cap must be >= 1, got {self.dataset_cap}")
        return problems


@dataclass
class CheckingEpochReport:
    epoch: int
    evaluated: int = 0
    wins_advanced: int = 0
    wins_base: int = 0
    no_decision: int = 0
    expanded_prompts: int = 0
    deleted_prompts: int = 0
    mutations_attempted: int = 0
    mutations_succeeded: int = 0
    per_backend_selections: dict[str, int] = field(default_factory=dict)
    api_cost_delta: Decimal = Decimal("0")
    dropped_duplicates: int = 0
    dropped_capacity: int = 0
    budget_exhausted: bool = False
    errors: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "evaluated": self.evaluated,
            "wins_advanced": self.wins_advanced,
            "wins_base": self.wins_base,
            "no_decision": self.no_decision,
            "expanded_prompts": self.expanded_prompts,
            "deleted_prompts": self.deleted_prompts,
            "mutations_attempted": self.mutations_attempted,
            "mutations_succeeded": self.mutations_succeeded,
            "per_backend_selections": dict(sorted(self.per_backend_selections.items())),
            "api_cost_delta": str(self.api_cost_delta),
            "dropped_duplicates": self.dropped_duplicates,
            "dropped_capacity": self.dropped_capacity,
            "budget_exhausted": self.budget_exhausted,
            "errors": list(self.errors),
        }


class PromptIdAllocator:
    def __init__(self, prefix: str = "p", next_value: int = 1):
        self.prefix = prefix
        self._next = next_value

    def allocate(self) -> str:
        value = self._next
        self._next += 1
        return f"{self.prefix}{value:06d}"

    @property
    def next_value(self) -> int:
        return self._next


def best_of_k(prompt: str, candidates: Sequence[tuple[str, ImageHandle]],
              client: judge_mod.JudgeClient, rng: Random) -> tuple[str, ImageHandle]:
    """Sequential knockout over the candidates for one prompt.

    The order is shuffled, then each challenger meets the current champion
    in a randomized-order pairwise judgment; K-1 comparisons total (judge
    fees are the scarce resource, and with a perfect judge a knockout
    agrees with any schedule).  NoDecision and transport failures keep the
    current champion.
    """
    if not candidates:
        raise ValueError("best_of_k needs at least one candidate")
    order = list(candidates)
    rng.shuffle(order)
    champion = order[0]
    for challenger in order[1:]:
        try:
            verdict = judge_mod.discriminate(prompt, challenger[1], champion[1], client, rng)
        except JudgeUnavailable as exc:
            logger.warning("best_of_k judge failure for %r: %s", prompt, exc)
            continue
        if verdict.winner == judge_mod.WINNER_ADVANCED:
            champion = challenger
    return champion


class Director:
    """Owns the judge-driven curation loop against one dataset."""

    def __init__(
        self,
        dataset: DynamicDataset,
        base_model: BaseModelPort,
        generators: GeneratorService,
        judge_client: judge_mod.JudgeClient,
        cfg: DirectorConfig,
        buckets: Sequence[BucketSpec],
        ids: PromptIdAllocator | None = None,
    ):
        self.dataset = dataset
        self.base_model = base_model
        self.generators = generators
        self.judge_client = judge_client
        self.cfg = cfg
        self.buckets = list(buckets)
        self.ids = ids or PromptIdAllocator()

    # Capacity the next staged add would need, counting staged removes as
    # freed (removes apply before adds inside the same transaction) and
    # honoring slots held back for later mutation adds.
    def _capacity_left(self, state: "_EpochState", held_back: int = 0) -> int:
        return (self.dataset.cap - len(self.dataset)
                + len(state.removes) - len(state.adds) - held_back)

    def _stage_generation(
        self,
        text: str,
        lineage: Lineage,
        epoch: int,
        rng: Random,
        state: "_EpochState",
        held_back: int = 0,
    ) -> bool:
        """Dedup-check, reserve capacity, generate with every backend, pick the
        best image, and stage the add.  Returns True when a sample was staged."""
        trimmed = text.strip()
        if not trimmed:
            return False
        if self.dataset.is_tombstoned(trimmed) or self.dataset.has_text(trimmed) \
                or trimmed in state.staged_texts:
            state.report.dropped_duplicates += 1
            logger.debug("dropping duplicate/tombstoned prompt %r", trimmed)
            return False
        if self._capacity_left(state, held_back) < 1:
            state.report.dropped_capacity += 1
            return False

        # Capacity is reserved from here on: no image is bought that cannot
        # be stored.
        prompt_id = self.ids.allocate()
        bucket = sample_bucket(self.buckets, rng)
        try:
            results, failures = self.generators.generate_all(trimmed, bucket, prompt_id=prompt_id)
        except AllBackendsFailed as exc:
            state.report.errors.append(f"{prompt_id}: {exc}")
            return False
        except BudgetExceeded as exc:
            state.report.budget_exhausted = True
            state.report.errors.append(f"{prompt_id}: {exc}")
            return False
        for failure in failures:
            state.report.errors.append(f"{prompt_id}: {failure.backend}: {failure.error}")

        backend_id, handle = best_of_k(trimmed, results, self.judge_client, rng)
        state.report.per_backend_selections[backend_id] = \
            state.report.per_backend_selections.get(backend_id, 0) + 1
        state.events.append(StagedEvent(
            ACTION_SELECT, prompt_id, "best_of_k",
            {"backend": backend_id, "candidates": len(results)},
        ))
        prompt = Prompt(prompt_id, trimmed, lineage, created_epoch=epoch)
        state.adds.append(Sample(prompt, handle, backend_id, bucket))
        state.staged_texts.add(trimmed)
        return True

    def _expand(self, parent: Sample, epoch: int, rng: Random, state: "_EpochState") -> None:
        try:
            expansion = judge_mod.expand(parent.prompt.text, self.cfg.extension_count,
                                         self.judge_client)
        except JudgeUnavailable as exc:
            state.report.errors.append(f"{parent.prompt.id}: expansion: {exc}")
            return
        staged_children: list[str] = []
        for text in expansion.variations:
            if state.report.budget_exhausted:
                break
            before = len(state.adds)
            if self._stage_generation(text, Lineage.expanded_from(parent.prompt.id),
                                      epoch, rng, state,
                                      held_back=state.mutation_reserve):
                staged_children.append(state.adds[before].prompt.id)
        state.events.append(StagedEvent(
            ACTION_EXPAND, parent.prompt.id, "base_model_lost",
            {"children": staged_children, "requested": self.cfg.extension_count},
        ))
        state.report.expanded_prompts += len(staged_children)

    def run_checking_epoch(self, epoch: int, rng: Random) -> CheckingEpochReport:
        state = _EpochState(CheckingEpochReport(epoch=epoch))
        cost_before = self.generators.ledger.total
        subset = self.dataset.sample_for_evaluation(self.cfg.select_ratio, rng)
        if self.cfg.mutation_rate > 0:
            # Expansion staging leaves this many slots free so the mutation
            # phase (which runs after) is not starved of capacity.
            state.mutation_reserve = math.ceil(self.cfg.mutation_rate * len(subset))

        for sample in subset:
            if self.cfg.enable_discrimination:
                self._judge_sample(sample, epoch, rng, state)
            elif self.cfg.enable_expansion and not state.report.budget_exhausted:
                # Ablation mode: no evaluation, every sampled prompt expands.
                self._expand(sample, epoch, rng, state)

        if self.cfg.mutation_rate > 0:
            for _ in subset:
                if rng.random() >= self.cfg.mutation_rate:
                    continue
                if state.report.budget_exhausted:
                    break
                state.report.mutations_attempted += 1
                try:
                    text = judge_mod.mutate(self.judge_client, rng)
                except (MutationFailed, JudgeUnavailable) as exc:
                    state.report.errors.append(f"mutation: {exc}")
                    continue
                before = len(state.adds)
                if self._stage_generation(text, Lineage.mutated(), epoch, rng, state):
                    state.report.mutations_succeeded += 1
                    state.mutation_reserve = max(0, state.mutation_reserve - 1)
                    state.events.append(StagedEvent(
                        ACTION_MUTATE, state.adds[before].prompt.id, "exploration", {},
                    ))

        removed, add_report = self.dataset.commit(
            epoch=epoch,
            removes=state.removes,
            adds=state.adds,
            staged_events=state.events,
        )
        state.report.deleted_prompts = removed
        for skip in add_report.skipped:
            state.report.errors.append(f"commit skipped {skip.prompt_id}: {skip.reason}")
        state.report.api_cost_delta = self.generators.ledger.total - cost_before
        return state.report

    def _judge_sample(self, sample: Sample, epoch: int, rng: Random,
                      state: "_EpochState") -> None:
        report = state.report
        report.evaluated += 1
        base_image = self.base_model.render(sample.prompt.text, sample.bucket, seed=epoch)
        try:
            verdict = judge_mod.discriminate(
                sample.prompt.text, sample.image, base_image, self.judge_client, rng,
            )
        except JudgeUnavailable as exc:
            report.no_decision += 1
            report.errors.append(f"{sample.prompt.id}: judge: {exc}")
            return
        if verdict.winner == judge_mod.WINNER_ADVANCED:
            report.wins_advanced += 1
            if self.cfg.enable_expansion and not report.budget_exhausted:
                self._expand(sample, epoch, rng, state)
        elif verdict.winner == judge_mod.WINNER_BASE:
            report.wins_base += 1
            state.removes.append((sample.prompt.id, REASON_MATCHED))
        else:
            report.no_decision += 1


@dataclass
class _EpochState:
    report: CheckingEpochReport
    adds: list[Sample] = field(default_factory=list)
    removes: list[tuple[str, str]] = field(default_factory=list)
    events: list[StagedEvent] = field(default_factory=list)
    staged_texts: set[str] = field(default_factory=set)
    mutation_reserve: int = 0
