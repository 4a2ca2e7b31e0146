"""Desk-scale simulation world.

Everything the orchestration loop needs from the outside world, with no
network and no model weights: a labeled prompt space, generator quality
profiles for the simulated advanced backends, a synthetic learner that
improves with exposure (the trainer stand-in behind BaseModelPort), a
noisy synthetic judge, and the quality-gap metric used in place of FID.

Determinism rules: per-image quality jitter is derived from content hashes
(pseudo module), never from shared RNG streams, so in-process and
out-of-process generators agree byte-for-byte; everything else draws from
explicitly seeded generators.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from . import judge as judge_mod
from . import pseudo
from .buckets import BucketSpec
from .errors import DomainMismatch
from .store import ImageHandle, ImageStore

logger = logging.getLogger(__name__)

WORLD_SCHEMA_VERSION = 1

DOMAIN_GENERAL = "general"
DOMAIN_HUMAN = "human"
DOMAIN_TEXT = "text"
DOMAIN_MULTI = "multi-object"
DOMAIN_ABSTRACT = "abstract"
DEFAULT_DOMAINS = (DOMAIN_GENERAL, DOMAIN_HUMAN, DOMAIN_TEXT, DOMAIN_MULTI)

# Keyword rules for domain assignment; checked in this order so a prompt
# maps to exactly one domain.
DOMAIN_KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    (DOMAIN_ABSTRACT, ("abstract composition", "tessellation", "fractal",
                       "gradient field", "non-representational")),
    (DOMAIN_TEXT, ("sign that reads", "lettering", "inscription", "billboard",
                   "poster", "typography", "word ", "caption")),
    (DOMAIN_MULTI, ("three ", "beside", "next to", "pair of", "group of", "cluster of")),
    (DOMAIN_HUMAN, ("woman", "man ", "portrait", "child", "dancer", "chef",
                    "farmer", "violinist", "elder", "sailor")),
)


def assign_domain(text: str) -> str:
    lowered = text.lower() + " "
    for domain, keywords in DOMAIN_KEYWORDS:
        if any(k in lowered for k in keywords):
            return domain
    return DOMAIN_GENERAL


def stable_hash(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


# ------------------------------------------------------------ text generator

_ADJECTIVES = (
    "weathered", "luminous", "forgotten", "gilded", "crumbling", "serene",
    "storm-lit", "overgrown", "colossal", "miniature", "painted", "frozen",
    "amber", "moss-covered", "drifting", "half-built", "sunken", "wind-carved",
)
_GENERAL_OBJECTS = (
    "lighthouse", "observatory", "canyon bridge", "tidal pool", "orchard",
    "glacier cave", "clockwork mill", "paper lantern", "river barge",
    "greenhouse", "salt flat", "dune field", "harbor crane", "monastery",
    "waterwheel", "radio tower", "terraced garden", "basalt column",
)
_SETTINGS = (
    "above a misty fjord", "under a violet sky", "at low tide", "in deep winter",
    "during a meteor shower", "after the rain", "at the edge of a caldera",
    "in morning fog", "beneath swirling auroras", "on a remote plateau",
    "lit by bioluminescence", "in a walled valley",
)
_HUMAN_ROLES = (
    "woman", "elder", "dancer", "chef", "farmer", "violinist", "sailor", "child",
)
_HUMAN_ACTIVITIES = (
    "reading by candlelight", "mending a net", "laughing in the rain",
    "sketching the horizon", "carrying lanterns", "braiding rope",
    "stirring a copper pot", "resting after harvest",
)
_SIGN_BEARERS = (
    "bakery window", "rusted gate", "neon marquee", "wooden signpost",
    "subway wall", "market stall", "cliffside shrine", "diner counter",
)
_SIGN_WORDS = (
    "HARBOR", "WELCOME", "NORTH", "DREAM", "OPEN LATE", "TICKETS",
    "LAST STOP", "FRESH BREAD", "DETOUR", "STARGAZE",
)
_MULTI_PRIMARY = (
    "copper kettles", "paper boats", "stone foxes", "glass bottles",
    "umbrellas", "beehives", "carved masks", "brass bells",
)
_MULTI_SECONDARY = (
    "sleeping cat", "broken column", "tin bathtub", "woven basket",
    "sundial", "stack of books", "terracotta pot", "weather vane",
)
_ABSTRACT_MOTIFS = (
    "interlocking rhombi", "spiraling ribbons", "folded planes",
    "branching filaments", "nested arcs", "shattered lattices",
    "woven meridians", "pulsing moire bands",
)
_ABSTRACT_PALETTES = (
    "in ochre and teal", "in ultraviolet gradients", "in muted greys",
    "in molten golds", "in cyan interference patterns", "in iridescent duotone",
)


class WorldTextGenerator:
    """Deterministic prompt fabrication for roots, expansions, and mutations."""

    def __init__(self, domains: tuple[str, ...], root_shares: dict[str, float],
                 seed: int, expansion_drift: float = 0.12):
        self.domains = domains
        self.root_shares = root_shares
        self.expansion_drift = expansion_drift
        self._root_rng = Random(seed)
        self._study_counter = 0
        # Fractional quota accumulators: drift fires every 1/rate variations
        # and cycles its target domain, so colonization pressure is steady
        # rather than a per-variation lottery.
        self._drift_acc = 0.0
        self._drift_cycle = 0

    def prompt_for_domain(self, domain: str, rng: Random) -> str:
        if domain == DOMAIN_HUMAN:
            return (f"A {rng.choice(_ADJECTIVES)} {rng.choice(_HUMAN_ROLES)} "
                    f"{rng.choice(_HUMAN_ACTIVITIES)}")
        if domain == DOMAIN_TEXT:
            return (f"A {rng.choice(_ADJECTIVES)} {rng.choice(_SIGN_BEARERS)} with a "
                    f"sign that reads '{rng.choice(_SIGN_WORDS)}'")
        if domain == DOMAIN_MULTI:
            return (f"Three {rng.choice(_MULTI_PRIMARY)} beside a "
                    f"{rng.choice(_ADJECTIVES)} {rng.choice(_MULTI_SECONDARY)}")
        if domain == DOMAIN_ABSTRACT:
            return (f"An abstract composition of {rng.choice(_ABSTRACT_MOTIFS)} "
                    f"{rng.choice(_ABSTRACT_PALETTES)}")
        return (f"A {rng.choice(_ADJECTIVES)} {rng.choice(_GENERAL_OBJECTS)} "
                f"{rng.choice(_SETTINGS)}")

    def _unique_prompt(self, domain: str, rng: Random, taken: set[str]) -> str:
        for _ in range(40):
            text = self.prompt_for_domain(domain, rng)
            if text not in taken:
                return text
        self._study_counter += 1
        return f"{self.prompt_for_domain(domain, rng)}, study {self._study_counter}"

    def _sample_root_domain(self, rng: Random) -> str:
        u = rng.random()
        acc = 0.0
        for domain in self.domains:
            acc += self.root_shares.get(domain, 0.0)
            if u < acc:
                return domain
        return self.domains[0]

    def root_prompts(self, n: int) -> list[str]:
        """Sequential draws from one stream: the first k of root_prompts(n)
        equal root_prompts(k), so "first N of the pool" is well defined."""
        out: list[str] = []
        taken: set[str] = set()
        while len(out) < n:
            domain = self._sample_root_domain(self._root_rng)
            text = self._unique_prompt(domain, self._root_rng, taken)
            taken.add(text)
            out.append(text)
        return out

    def variation_texts(self, parent: str, n: int, salt: str) -> list[str]:
        """Noun-substituted variations: mostly the parent's domain, with a
        drift probability of landing in another domain.

        Noun swaps can only reach other concrete domains; structure-level
        novelty (the abstract domain) is mutation's channel, since mutation
        asks for a completely different structure while expansion only
        replaces nouns.
        """
        rng = Random(stable_hash(f"expand|{parent}|{salt}"))
        parent_domain = assign_domain(parent)
        others = [d for d in self.domains
                  if d not in (parent_domain, DOMAIN_ABSTRACT)]
        out: list[str] = []
        taken = {parent.strip()}
        for _ in range(n):
            domain = parent_domain
            if others:
                self._drift_acc += self.expansion_drift
                if self._drift_acc >= 1.0:
                    self._drift_acc -= 1.0
                    domain = others[self._drift_cycle % len(others)]
                    self._drift_cycle += 1
            text = self._unique_prompt(domain, rng, taken)
            taken.add(text)
            out.append(text)
        return out

    def mutation_text(self, salt: str, index: int = 0) -> str:
        """Brand-new prompt, unrelated to anything in the set.

        Successive mutations cycle through the domains so exploration is
        maximally diverse (uniform frequency, deterministic coverage).
        """
        rng = Random(stable_hash(f"mutate|{salt}"))
        domain = self.domains[index % len(self.domains)]
        return self.prompt_for_domain(domain, rng)


# ------------------------------------------------------------------- learner


@dataclass
class GeneratorProfile:
    backend_id: str
    quality: dict[str, float]
    noise_sd: float = 0.05

    def __post_init__(self):
        for domain, q in self.quality.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"{self.backend_id}: quality[{domain}]={q} outside [0, 1]")
        if self.noise_sd < 0:
            raise ValueError(f"{self.backend_id}: noise_sd must be non-negative")

    def realized_quality(self, prompt: str, domain: str, width: int, height: int) -> float:
        key = f"{self.backend_id}|{width}x{height}|{prompt}"
        return pseudo.realized_quality(self.quality[domain], self.noise_sd, key)

    def generate_bytes(self, prompt: str, domain: str, width: int, height: int) -> bytes:
        q = self.realized_quality(prompt, domain, width, height)
        return pseudo.encode(self.backend_id, prompt, width, height, q)


@dataclass
class SyntheticLearner:
    """Trainer stand-in: per-domain quality that only ever improves.

    Exposure to a sample of quality s in domain d pulls q_d toward s by the
    learning rate, but only when s exceeds q_d — so returns diminish as the
    learner approaches the quality of what it is shown.
    """

    quality: dict[str, float]
    learning_rate: float = 0.05
    noise_sd: float = 0.05
    exposure_count: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        for domain, q in self.quality.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"learner quality[{domain}]={q} outside [0, 1]")
        for domain in self.quality:
            self.exposure_count.setdefault(domain, 0)

    def observe(self, domain: str, sample_quality: float) -> None:
        q = self.quality[domain]
        if sample_quality > q:
            self.quality[domain] = q + self.learning_rate * (sample_quality - q)
        self.exposure_count[domain] = self.exposure_count.get(domain, 0) + 1


def quality_gap(learner_quality: dict[str, float], reference: dict[str, float]) -> float:
    """RMS over domains of the learner's shortfall versus the reference.

    Shortfall is clamped below at zero: exceeding the reference earns no
    credit.  Both maps must cover the same domains.
    """
    if set(learner_quality) != set(reference):
        raise DomainMismatch(
            f"domains differ: {sorted(learner_quality)} vs {sorted(reference)}"
        )
    total = 0.0
    for domain, ref in reference.items():
        shortfall = max(0.0, ref - learner_quality[domain])
        total += shortfall * shortfall
    return (total / len(reference)) ** 0.5


def synthetic_judge(quality_x: float, quality_y: float, accuracy: float,
                    rng: Random) -> int:
    """Pick 0 (x) or 1 (y): the higher-quality image with probability
    ``accuracy``, the other otherwise; exact ties are a fair coin."""
    if not 0.5 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0.5, 1], got {accuracy}")
    if quality_x == quality_y:
        return 0 if rng.random() < 0.5 else 1
    higher = 0 if quality_x > quality_y else 1
    if accuracy >= 1.0:
        return higher
    return higher if rng.random() < accuracy else 1 - higher


# --------------------------------------------------------------------- world


class SimWorld:
    """One fully-instantiated simulation universe, bound to an image store."""

    def __init__(self, config: dict, store: ImageStore, seed: int = 0):
        if int(config.get("schema_version", WORLD_SCHEMA_VERSION)) != WORLD_SCHEMA_VERSION:
            raise ValueError(f"unsupported world schema {config.get('schema_version')}")
        self.config = config
        self.store = store
        self.seed = seed
        self.domains: tuple[str, ...] = tuple(config.get("domains", DEFAULT_DOMAINS))
        self.profiles: dict[str, GeneratorProfile] = {
            p["backend_id"]: GeneratorProfile(
                p["backend_id"], dict(p["quality"]), float(p.get("noise_sd", 0.05))
            )
            for p in config["profiles"]
        }
        learner_cfg = config["learner"]
        self.learner = SyntheticLearner(
            quality=dict(learner_cfg["quality"]),
            learning_rate=float(learner_cfg.get("learning_rate", 0.05)),
            noise_sd=float(learner_cfg.get("noise_sd", 0.05)),
        )
        self.judge_accuracy = float(config.get("judge_accuracy", 0.84))
        self.reference: dict[str, float] = dict(
            config.get("reference") or self.derive_reference(self.profiles.values())
        )
        self.text_gen = WorldTextGenerator(
            self.domains,
            dict(config.get("root_shares", {DOMAIN_GENERAL: 1.0})),
            seed=stable_hash(f"roots|{config.get('root_prompt_seed', 0)}|{seed}"),
            expansion_drift=float(config.get("expansion_drift", 0.12)),
        )
        self._domain_cache: dict[str, str] = {}
        self._quality_cache: dict[str, float] = {}

    @staticmethod
    def derive_reference(profiles, margin_sds: float = 2.0) -> dict[str, float]:
        """Default reference: per-domain best profile at +margin_sds of its
        jitter, clamped to 1 — what the advanced pool actually produces at
        its best, which is what the learner is measured against."""
        profiles = list(profiles)
        domains = set()
        for p in profiles:
            domains.update(p.quality)
        out = {}
        for d in sorted(domains):
            out[d] = min(1.0, max(p.quality[d] + margin_sds * p.noise_sd
                                  for p in profiles if d in p.quality))
        return out

    @classmethod
    def from_file(cls, path: str | Path, store: ImageStore, seed: int = 0) -> "SimWorld":
        config = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(config, store, seed)

    def domain_of(self, text: str) -> str:
        domain = self._domain_cache.get(text)
        if domain is None:
            domain = assign_domain(text)
            self._domain_cache[text] = domain
        return domain

    def quality_of(self, image: ImageHandle | str) -> float:
        sha = image.sha256 if isinstance(image, ImageHandle) else image
        q = self._quality_cache.get(sha)
        if q is None:
            meta = self.store.metadata(sha)
            q = float(meta.get("quality", 0.5))
            self._quality_cache[sha] = q
        return q

    def in_process_generators(self):
        """Profile-name -> (prompt, w, h) -> bytes, for the backends service."""
        out = {}
        for name, profile in self.profiles.items():
            def gen(prompt: str, width: int, height: int, _p=profile) -> bytes:
                return _p.generate_bytes(prompt, self.domain_of(prompt), width, height)
            out[name] = gen
        return out

    def root_prompts(self, n: int) -> list[str]:
        return self.text_gen.root_prompts(n)


class LearnerPort:
    """BaseModelPort implementation backed by the synthetic learner."""

    BACKEND_LABEL = "base-model"

    def __init__(self, world: SimWorld):
        self.world = world

    def render(self, prompt: str, bucket: BucketSpec, seed: int = 0) -> ImageHandle:
        domain = self.world.domain_of(prompt)
        q = self.world.learner.quality[domain]
        key = f"{self.BACKEND_LABEL}|{bucket.width}x{bucket.height}|{prompt}|{seed}|{q:.12f}"
        realized = pseudo.realized_quality(q, self.world.learner.noise_sd, key)
        data = pseudo.encode(self.BACKEND_LABEL, prompt, bucket.width, bucket.height, realized)
        return self.world.store.put(
            data, width=bucket.width, height=bucket.height,
            backend=self.BACKEND_LABEL, prompt_id="", quality=realized,
        )


def training_step(learner: SyntheticLearner, batch, world: SimWorld) -> SyntheticLearner:
    """Consume one batch from the dynamic dataset snapshot."""
    for sample in batch:
        domain = world.domain_of(sample.prompt.text)
        learner.observe(domain, world.quality_of(sample.image))
    return learner


class SyntheticJudgeClient(judge_mod.JudgeClient):
    """Judge backend parameterized by accuracy; replies in the exact
    phrasings the parsers document.

    Discrimination compares the realized qualities carried in the image
    sidecars.  Expansion and mutation fabricate prompt texts from the
    world's generator, keyed by an internal call counter so repeated calls
    differ deterministically.
    """

    _EXPAND_RE = None  # compiled lazily from the template below

    def __init__(self, world: SimWorld, accuracy: float | None = None,
                 seed: int = 0):
        self.world = world
        self.accuracy = world.judge_accuracy if accuracy is None else accuracy
        self.rng = Random(stable_hash(f"judge|{seed}|{world.seed}"))
        self._calls = 0
        self._mutations = 0

    def discriminate_raw(self, prompt, image_a, image_b, instruction):
        qa = self.world.quality_of(image_a)
        qb = self.world.quality_of(image_b)
        pick = synthetic_judge(qa, qb, self.accuracy, self.rng)
        return "(A) is better" if pick == 0 else "(B) is better"

    @staticmethod
    def parse_expand_instruction(instruction: str) -> tuple[str, int] | None:
        import re
        m = re.search(r'text description: "(.*)" with other kinds', instruction, re.DOTALL)
        n = re.search(r"generate (\d+) more diverse", instruction)
        if m and n:
            return m.group(1), int(n.group(1))
        return None

    def complete(self, instruction, kind):
        self._calls += 1
        if kind == "expand":
            parsed = self.parse_expand_instruction(instruction)
            if parsed is None:
                return "I cannot parse that request."
            parent, n = parsed
            variations = self.world.text_gen.variation_texts(parent, n, salt=str(self._calls))
            return json.dumps(variations)
        if kind == "mutate":
            self._mutations += 1
            text = self.world.text_gen.mutation_text(
                salt=f"{self.world.seed}|{self._calls}", index=self._mutations - 1)
            return json.dumps([text])
        raise ValueError(f"unknown completion kind {kind!r}")


# ------------------------------------------------------------ default worlds


def default_ablation_world_config() -> dict:
    """Single advanced backend, shaped for the data-scale ablation runs.

    The root prompt pool is photographic-caption flavored: no in-image-text
    prompts and no abstract compositions, few multi-object scenes.  Static
    datasets therefore never teach the learner those domains; the curation
    loop reaches the text domain through expansion drift and the abstract
    domain only through mutation (noun swaps cannot invent a new structure).
    The reference is the advanced model's near-peak output (mean + 2.5
    jitter sd in most domains), so bigger pools also help through their
    quality tails.
    """
    return {
        "schema_version": WORLD_SCHEMA_VERSION,
        "domains": [DOMAIN_GENERAL, DOMAIN_HUMAN, DOMAIN_TEXT, DOMAIN_MULTI,
                    DOMAIN_ABSTRACT],
        "root_shares": {
            DOMAIN_GENERAL: 0.80, DOMAIN_HUMAN: 0.12,
            DOMAIN_MULTI: 0.08, DOMAIN_TEXT: 0.0, DOMAIN_ABSTRACT: 0.0,
        },
        "root_prompt_seed": 7,
        "expansion_drift": 0.25,
        "profiles": [
            {
                "backend_id": "advanced-sim",
                "quality": {
                    DOMAIN_GENERAL: 0.80, DOMAIN_HUMAN: 0.78,
                    DOMAIN_TEXT: 0.74, DOMAIN_MULTI: 0.76,
                    DOMAIN_ABSTRACT: 0.76,
                },
                "noise_sd": 0.04,
            }
        ],
        "reference": {
            DOMAIN_GENERAL: 0.928, DOMAIN_HUMAN: 0.880,
            DOMAIN_TEXT: 0.840, DOMAIN_MULTI: 0.860, DOMAIN_ABSTRACT: 0.860,
        },
        "learner": {
            "quality": {
                DOMAIN_GENERAL: 0.48, DOMAIN_HUMAN: 0.34,
                DOMAIN_TEXT: 0.20, DOMAIN_MULTI: 0.30, DOMAIN_ABSTRACT: 0.22,
            },
            "learning_rate": 0.000012,
            "noise_sd": 0.0,
        },
        "judge_accuracy": 0.84,
    }


def default_multi_model_world_config() -> dict:
    """Four advanced backends with distinct domain strengths: one strongest
    overall, one much weaker than the rest at in-image text, one strongest
    at text, one weakest overall."""
    return {
        "schema_version": WORLD_SCHEMA_VERSION,
        "domains": list(DEFAULT_DOMAINS),
        "root_shares": {
            DOMAIN_GENERAL: 0.55, DOMAIN_HUMAN: 0.18,
            DOMAIN_MULTI: 0.15, DOMAIN_TEXT: 0.12,
        },
        "root_prompt_seed": 11,
        "expansion_drift": 0.12,
        "profiles": [
            {
                "backend_id": "floyd-sim",
                "quality": {DOMAIN_GENERAL: 0.66, DOMAIN_HUMAN: 0.60,
                            DOMAIN_TEXT: 0.74, DOMAIN_MULTI: 0.62},
                "noise_sd": 0.05,
            },
            {
                "backend_id": "playground-sim",
                "quality": {DOMAIN_GENERAL: 0.75, DOMAIN_HUMAN: 0.84,
                            DOMAIN_TEXT: 0.45, DOMAIN_MULTI: 0.72},
                "noise_sd": 0.05,
            },
            {
                "backend_id": "ideogram-sim",
                "quality": {DOMAIN_GENERAL: 0.82, DOMAIN_HUMAN: 0.80,
                            DOMAIN_TEXT: 0.78, DOMAIN_MULTI: 0.80},
                "noise_sd": 0.05,
            },
            {
                "backend_id": "sd3-sim",
                "quality": {DOMAIN_GENERAL: 0.77, DOMAIN_HUMAN: 0.79,
                            DOMAIN_TEXT: 0.80, DOMAIN_MULTI: 0.74},
                "noise_sd": 0.05,
            },
        ],
        "learner": {
            "quality": {
                DOMAIN_GENERAL: 0.45, DOMAIN_HUMAN: 0.35,
                DOMAIN_TEXT: 0.25, DOMAIN_MULTI: 0.30,
            },
            "learning_rate": 0.0002,
            "noise_sd": 0.05,
        },
        "judge_accuracy": 0.84,
    }
