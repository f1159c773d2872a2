"""Self-contained scripted worlds for desk-scale verification and demos.

The arithmetic world pairs small addition questions with a scripted provider
that behaves like two personas over one model: prompted with the question
alone it answers in its own terse style (and holds a wrong belief on a known
subset of items), while prompted with the answer-revealing shadow template it
confidently reproduces the true answer in either its own verbose style or the
student's style.  The stylized corpora build two disjoint-vocabulary text
sets over a shared alphabet for n-gram separation experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

from .decoding import HintedConfig, MixSchedule
from .pipeline import DatasetItem
from .providers import CharTokenizer, MixtureOfSequencesProvider, SamplerConfig, derive_rng

ARITH_SHADOW_PROMPT = "given {question} answer {answer} explain "
ARITH_BOUNDARY = "## "
ARITH_SPLITTER = "\\boxed{"


@dataclass(frozen=True)
class ArithWorld:
    provider: MixtureOfSequencesProvider
    items: tuple[DatasetItem, ...]
    config: HintedConfig
    solvable_ids: frozenset[str]
    beliefs: dict[str, int]


def _student_candidates(a: int, b: int, belief: int, total: int) -> list[tuple[str, float]]:
    # Zero-weight candidates are latent paths: never started unaided, but
    # followed coherently once the generated prefix matches them best.
    return [
        (f"i think sum of {a} and {b} makes \\boxed{{{belief}}} ok", 1.0),
        (f"i see that {a} plus {b} gives \\boxed{{{total}}} ok", 0.0),
        (f"the result equals \\boxed{{{total}}} done", 0.0),
    ]


def _imitator_candidates(a: int, b: int, total: int) -> list[tuple[str, float]]:
    analysis = f"note answer {total} {ARITH_BOUNDARY}"
    return [
        (f"{analysis}the result equals \\boxed{{{total}}} done", 0.7),
        (f"{analysis}i see that {a} plus {b} gives \\boxed{{{total}}} ok", 0.3),
    ]


def build_arith_world(
    n_items: int = 40,
    solvable_fraction: float = 0.6,
    seed: int = 7,
    beta: float = 10.0,
    noise_open: float = 0.08,
    noise_locked: float = 1e-4,
) -> ArithWorld:
    rng = derive_rng(seed, "arith-world")
    pairs = [(a, b) for a in range(1, 9) for b in range(1, 9)]
    order = rng.permutation(len(pairs))
    chosen = [pairs[i] for i in order[:n_items]]
    n_solvable = round(n_items * solvable_fraction)

    items: list[DatasetItem] = []
    beliefs: dict[str, int] = {}
    solvable: set[str] = set()
    prompt_candidates: dict[str, list[tuple[str, float]]] = {}
    lock_spans: list[str] = []

    config = HintedConfig(
        schedule=MixSchedule(mode="linear", beta=beta),
        shadow_prompt=ARITH_SHADOW_PROMPT,
        boundary_marker=ARITH_BOUNDARY,
        splitter=ARITH_SPLITTER,
        max_len=80,
        analysis_max_tokens=64,
        sampler=SamplerConfig(temperature=1.0),
        analysis_sampler=SamplerConfig(temperature=1.0),
    )

    for idx, (a, b) in enumerate(chosen):
        total = a + b
        item_id = f"arith-{idx:03d}"
        question = f"what is {a} + {b} ?"
        answer = str(total)
        is_solvable = idx < n_solvable
        belief = total if is_solvable else total + 1
        if is_solvable:
            solvable.add(item_id)
        beliefs[item_id] = belief
        items.append(DatasetItem(id=item_id, question=question, reference_answer=answer))
        prompt_candidates[question] = _student_candidates(a, b, belief, total)
        shadow = ARITH_SHADOW_PROMPT.format(question=question, answer=answer)
        prompt_candidates[shadow] = _imitator_candidates(a, b, total)
        lock_spans.append(f"note answer {total} {ARITH_BOUNDARY}")

    # content phrases the answer-aware persona is confident about; style
    # filler stays at the open noise level
    lock_spans.extend(["see that", "plus", "gives"])

    alphabet = {c for text in prompt_candidates for c in text}
    for cands in prompt_candidates.values():
        alphabet.update(c for text, _ in cands for c in text)
    tokenizer = CharTokenizer(alphabet)

    provider = MixtureOfSequencesProvider(
        tokenizer=tokenizer,
        prompt_candidates=prompt_candidates,
        noise_open=noise_open,
        noise_locked=noise_locked,
        lock_open=ARITH_SPLITTER,
        lock_close="}",
        lock_spans=lock_spans,
    )
    return ArithWorld(
        provider=provider,
        items=tuple(items),
        config=config,
        solvable_ids=frozenset(solvable),
        beliefs=beliefs,
    )


def build_stubborn_world(n_items: int = 6, seed: int = 11) -> ArithWorld:
    """Variant where even the answer-aware persona asserts a wrong value, so
    every guided decode fails verification and gets dropped."""
    world = build_arith_world(n_items=n_items, solvable_fraction=0.0, seed=seed)
    prompt_candidates: dict[str, list[tuple[str, float]]] = {}
    lock_spans: list[str] = []
    for item in world.items:
        a, b = _parse_question(item.question)
        total = a + b
        wrong = total + 1
        prompt_candidates[item.question] = _student_candidates(a, b, wrong, wrong)
        shadow = ARITH_SHADOW_PROMPT.format(question=item.question, answer=item.reference_answer)
        prompt_candidates[shadow] = [
            (f"note answer {wrong} {ARITH_BOUNDARY}the result equals \\boxed{{{wrong}}} done", 1.0)
        ]
        lock_spans.append(f"note answer {wrong} {ARITH_BOUNDARY}")
    alphabet = {c for text in prompt_candidates for c in text}
    for cands in prompt_candidates.values():
        alphabet.update(c for text, _ in cands for c in text)
    provider = MixtureOfSequencesProvider(
        tokenizer=CharTokenizer(alphabet),
        prompt_candidates=prompt_candidates,
        lock_open=ARITH_SPLITTER,
        lock_close="}",
        lock_spans=lock_spans,
    )
    return ArithWorld(
        provider=provider,
        items=world.items,
        config=world.config,
        solvable_ids=frozenset(),
        beliefs={i.id: 0 for i in world.items},
    )


def _parse_question(question: str) -> tuple[int, int]:
    parts = question.split()
    return int(parts[2]), int(parts[4])


# ---------------------------------------------------------------------------
# Stylized corpora for n-gram separation experiments

_WORDS_A = ("mole", "dune", "fern", "kelp", "iris", "opal", "reed", "stone")
_WORDS_B = ("vastness", "quycker", "jazzily", "wexford", "bumbled", "growthy")


def build_stylized_corpora(
    lines: int = 400,
    words_per_line: int = 8,
    seed: int = 3,
) -> tuple[list[str], list[str]]:
    """Two corpora with disjoint word inventories over one character set."""
    rng_a = derive_rng(seed, "corpus-a")
    rng_b = derive_rng(seed, "corpus-b")
    corpus_a = [
        " ".join(_WORDS_A[rng_a.integers(len(_WORDS_A))] for _ in range(words_per_line))
        for _ in range(lines)
    ]
    corpus_b = [
        " ".join(_WORDS_B[rng_b.integers(len(_WORDS_B))] for _ in range(words_per_line))
        for _ in range(lines)
    ]
    return corpus_a, corpus_b
