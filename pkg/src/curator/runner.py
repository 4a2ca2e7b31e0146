"""End-to-end run wiring: trainer loop + director loop over one dataset.

A run owns the RNG discipline: one master seed fans out into separate
streams for bootstrap, trainer batches, director decisions, and the
synthetic judge, so sequential runs with the same (world, config, seed)
produce byte-identical decision logs.

Two execution modes: sequential (deterministic, used by tests and
experiments) and threaded (trainer thread never blocks on the director;
the director gets checking-epoch triggers through a queue).
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from random import Random
from typing import Sequence

from .backends import BackendDescriptor, GeneratorService
from .buckets import BucketSpec, build_buckets
from .clock import Clock, VirtualClock
from .dataset import Lineage, DynamicDataset
from .director import (
    CheckingEpochReport,
    Director,
    DirectorConfig,
    PromptIdAllocator,
    _EpochState,
)
from .errors import BudgetExceeded
from .jsonl import append_jsonl
from .judge import JudgeClient
from .ledger import CostLedger
from .simulation import (
    LearnerPort,
    SimWorld,
    SyntheticJudgeClient,
    quality_gap,
    stable_hash,
    training_step,
)
from .store import ImageStore, MemoryImageStore

logger = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    total_steps: int = 50_000
    batch_size: int = 16
    steps_per_epoch: int = 25

    def validate(self) -> list[str]:
        problems = []
        if self.total_steps < 0:
            problems.append(f"trainer.total_steps must be >= 0, got {self.total_steps}")
        if self.batch_size < 1:
            problems.append(f"trainer.batch_size must be >= 1, got {self.batch_size}")
        if self.steps_per_epoch < 1:
            problems.append(f"trainer.steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        return problems


@dataclass
class RunResult:
    steps_done: int = 0
    epochs_done: int = 0
    final_quality_gap: float = 0.0
    size_history: list[tuple[int, int]] = field(default_factory=list)
    gap_history: list[tuple[int, float]] = field(default_factory=list)
    reports: list[CheckingEpochReport] = field(default_factory=list)
    generate_calls: int = 0
    total_cost: Decimal = Decimal("0")
    stop_reason: str = "completed"


def sim_descriptors(world: SimWorld, cost_per_call: str = "0.01",
                    qps_limit: float = 1e6) -> list[BackendDescriptor]:
    """In-process backend descriptors, one per generator profile."""
    sizes = build_buckets(512)
    return [
        BackendDescriptor(
            id=profile_name,
            cost_per_call=Decimal(cost_per_call),
            qps_limit=qps_limit,
            supported_sizes=sizes,
            endpoint=f"in-process:{profile_name}",
        )
        for profile_name in world.profiles
    ]


class TrainingRun:
    def __init__(
        self,
        world: SimWorld,
        director_cfg: DirectorConfig,
        trainer_cfg: TrainerConfig,
        seed: int,
        *,
        descriptors: Sequence[BackendDescriptor] | None = None,
        judge_client: JudgeClient | None = None,
        dataset: DynamicDataset | None = None,
        out_dir: str | Path | None = None,
        clock: Clock | None = None,
        buckets: Sequence[BucketSpec] | None = None,
        director_enabled: bool = True,
        ids: PromptIdAllocator | None = None,
    ):
        self.world = world
        self.director_cfg = director_cfg
        self.trainer_cfg = trainer_cfg
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir else None
        self.director_enabled = director_enabled

        self.clock = clock or VirtualClock()
        self.ledger = CostLedger(budget=director_cfg.budget, clock=self.clock)
        self.dataset = dataset or DynamicDataset(cap=director_cfg.dataset_cap)
        self.generators = GeneratorService(
            descriptors if descriptors is not None else sim_descriptors(world),
            store=world.store,
            ledger=self.ledger,
            clock=self.clock,
            in_process=world.in_process_generators(),
        )
        self.judge_client = judge_client or SyntheticJudgeClient(
            world, seed=stable_hash(f"judge-stream|{seed}")
        )
        self.buckets = list(buckets) if buckets else build_buckets(512)
        self.base_port = LearnerPort(world)
        self.director = Director(
            self.dataset, self.base_port, self.generators, self.judge_client,
            director_cfg, self.buckets, ids=ids or PromptIdAllocator(),
        )

        self._bootstrap_rng = Random(stable_hash(f"bootstrap|{seed}"))
        self._trainer_rng = Random(stable_hash(f"trainer|{seed}"))
        self._director_rng = Random(stable_hash(f"director|{seed}"))
        self._decisions_flushed_seq = 0
        self._stop = threading.Event()
        self.epoch = 0
        self.steps_done = 0

    # ------------------------------------------------------------- bootstrap

    def bootstrap(self, n_initial: int) -> int:
        """Load the initial root prompts, buying one image per prompt via the
        usual all-backends + best-of-K path.  Returns the accepted count."""
        if n_initial <= 0:
            return 0
        state = _EpochState(CheckingEpochReport(epoch=0))
        for text in self.world.root_prompts(n_initial):
            if state.report.budget_exhausted:
                break
            self.director._stage_generation(text, Lineage.root(), 0, self._bootstrap_rng, state)
        _, report = self.dataset.commit(
            epoch=0, adds=state.adds, staged_events=state.events, add_reason="initial",
        )
        self._emit({"event": "bootstrap", "requested": n_initial,
                    "accepted": report.accepted, "skipped": report.skipped_count})
        self._flush_decisions()
        return report.accepted

    # ------------------------------------------------------------ run loops

    def _emit(self, event: dict) -> None:
        if self.out_dir is not None:
            append_jsonl(self.out_dir / "metrics.jsonl", event)

    def _flush_decisions(self) -> None:
        if self.out_dir is not None:
            self._decisions_flushed_seq = self.dataset.append_decisions_to(
                self.out_dir / "dataset" / "decisions.jsonl", self._decisions_flushed_seq,
            )

    def current_gap(self) -> float:
        return quality_gap(self.world.learner.quality, self.world.reference)

    def _train_one_epoch(self, result: RunResult) -> None:
        snapshot = self.dataset.snapshot()
        for _ in range(self.trainer_cfg.steps_per_epoch):
            if self.steps_done >= self.trainer_cfg.total_steps:
                return
            if snapshot:
                batch = self._trainer_rng.choices(snapshot, k=self.trainer_cfg.batch_size)
                training_step(self.world.learner, batch, self.world)
            self.steps_done += 1

    def _checking_epoch(self, result: RunResult) -> CheckingEpochReport | None:
        if len(self.dataset) == 0:
            return None
        report = self.director.run_checking_epoch(self.epoch, self._director_rng)
        result.reports.append(report)
        result.size_history.append((self.epoch, len(self.dataset)))
        result.gap_history.append((self.epoch, self.current_gap()))
        self._emit({"event": "checking_epoch", **report.as_dict(),
                    "active": len(self.dataset), "quality_gap": self.current_gap()})
        self._flush_decisions()
        return report

    def run(self) -> RunResult:
        """Sequential deterministic loop: train, check, repeat."""
        result = RunResult()
        self._emit({"event": "run_start", "seed": self.seed,
                    "total_steps": self.trainer_cfg.total_steps})
        try:
            while self.steps_done < self.trainer_cfg.total_steps and not self._stop.is_set():
                self.epoch += 1
                self._train_one_epoch(result)
                if (self.director_enabled
                        and self.epoch % self.director_cfg.checking_interval == 0):
                    report = self._checking_epoch(result)
                    if report is not None and report.budget_exhausted:
                        result.stop_reason = "budget_exceeded"
                        break
        except BudgetExceeded:
            result.stop_reason = "budget_exceeded"
        if self._stop.is_set() and result.stop_reason == "completed":
            result.stop_reason = "interrupted"
        return self._finalize(result)

    def run_threaded(self) -> RunResult:
        """Trainer thread runs uninterrupted; the director consumes checking
        epoch triggers from a queue and commits between trainer steps."""
        result = RunResult()
        triggers: queue.Queue[int | None] = queue.Queue()
        self._emit({"event": "run_start", "seed": self.seed, "mode": "threaded",
                    "total_steps": self.trainer_cfg.total_steps})

        def trainer_loop():
            while self.steps_done < self.trainer_cfg.total_steps and not self._stop.is_set():
                self.epoch += 1
                self._train_one_epoch(result)
                if (self.director_enabled
                        and self.epoch % self.director_cfg.checking_interval == 0):
                    triggers.put(self.epoch)
            triggers.put(None)

        trainer = threading.Thread(target=trainer_loop, name="trainer", daemon=True)
        trainer.start()
        while True:
            trigger = triggers.get()
            if trigger is None:
                break
            report = self._checking_epoch(result)
            if report is not None and report.budget_exhausted:
                result.stop_reason = "budget_exceeded"
                self._stop.set()
        trainer.join()
        if self._stop.is_set() and result.stop_reason == "completed":
            result.stop_reason = "interrupted"
        return self._finalize(result)

    def stop(self) -> None:
        self._stop.set()

    def _finalize(self, result: RunResult) -> RunResult:
        result.steps_done = self.steps_done
        result.epochs_done = self.epoch
        result.final_quality_gap = self.current_gap()
        result.generate_calls = self.ledger.call_count
        result.total_cost = self.ledger.total
        if self.out_dir is not None:
            self.persist()
            self._emit({"event": "run_end", "steps": self.steps_done,
                        "epochs": self.epoch, "active": len(self.dataset),
                        "quality_gap": result.final_quality_gap,
                        "generate_calls": result.generate_calls,
                        "total_cost": str(result.total_cost),
                        "stop_reason": result.stop_reason})
        return result

    # ----------------------------------------------------------- persistence

    def persist(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.dataset.persist(self.out_dir / "dataset")
        state = {
            "seed": self.seed,
            "epoch": self.epoch,
            "steps_done": self.steps_done,
            "next_prompt_id": self.director.ids.next_value,
            "learner_quality": self.world.learner.quality,
            "exposure_count": self.world.learner.exposure_count,
        }
        (self.out_dir / "run_state.json").write_text(
            json.dumps(state, sort_keys=True, indent=2), encoding="utf-8")
        ledger_records = self.ledger.to_records()
        from .jsonl import write_jsonl
        write_jsonl(self.out_dir / "ledger.jsonl", ledger_records)

    def restore(self, run_dir: str | Path) -> None:
        """Resume dataset, id allocator, counters, and learner state from a
        persisted run directory."""
        run_dir = Path(run_dir)
        self.dataset = DynamicDataset.load(run_dir / "dataset")
        state = json.loads((run_dir / "run_state.json").read_text(encoding="utf-8"))
        self.epoch = int(state["epoch"])
        self.steps_done = int(state["steps_done"])
        self.world.learner.quality.update(state.get("learner_quality", {}))
        self.world.learner.exposure_count.update(
            {k: int(v) for k, v in state.get("exposure_count", {}).items()})
        self.director.ids = PromptIdAllocator(next_value=int(state["next_prompt_id"]))
        self.director.dataset = self.dataset
        self._decisions_flushed_seq = (
            self.dataset.decision_log[-1].seq if self.dataset.decision_log else 0
        )


def growth_trajectory(
    cfg: DirectorConfig,
    world_config: dict,
    checking_epochs: int,
    seed: int,
    *,
    trainer_cfg: TrainerConfig | None = None,
    initial_samples: int = 20,
) -> list[tuple[int, int]]:
    """Dataset size after each of the first N checking epochs.

    Used to compare growth rates across select-ratio / extension-count
    settings on the same seeded world.
    """
    trainer_cfg = trainer_cfg or TrainerConfig(
        total_steps=checking_epochs * cfg.checking_interval * 5,
        batch_size=8,
        steps_per_epoch=5,
    )
    world = SimWorld(world_config, MemoryImageStore(), seed=seed)
    run = TrainingRun(world, cfg, trainer_cfg, seed)
    run.bootstrap(initial_samples)
    result = run.run()
    return result.size_history[:checking_epochs]
