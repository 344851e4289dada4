"""Test-only agents, backends, and independent oracles."""

from functools import lru_cache

from refgame.agents import Agent, CompositionalOracle, _argmin
from refgame.domain import Stimulus, enumerate_stimuli
from refgame.metrics import normalized_levenshtein, semantic_similarity
from refgame.prompts import Prompt, PromptTask, parse_vocabulary_line


def recursive_levenshtein(a: str, b: str) -> int:
    """Plain-recursion edit distance, the independent oracle for the DP path."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            rec(i - 1, j) + 1,
            rec(i, j - 1) + 1,
            rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return rec(len(a), len(b))


class InContextLearnerBackend:
    """Scripted backend that answers purely from the rendered prompt text.

    Behaves like an ideal in-context learner: completions retrieve the word
    of the context entry closest in meaning to the stem's attributes, and
    continuation scores reward similarity to the retrieved answer. Exercises
    the whole prompt/agent/engine stack without a model.
    """

    event_log = None

    @staticmethod
    def _entries(prompt: Prompt):
        return [parse_vocabulary_line(line) for line in prompt.vocabulary_lines]

    @staticmethod
    def _stem_stimulus(prompt: Prompt) -> Stimulus:
        import re

        match = re.match(
            r"\{'shape':(\d),'colour':'(\w+)','amount':(\d),'word':'", prompt.stem
        )
        assert match, prompt.stem
        return Stimulus(int(match[1]), match[2], int(match[3]))

    @staticmethod
    def _stem_word(prompt: Prompt) -> str:
        import re

        match = re.match(r"\{'word':'([^']*)','shape':$", prompt.stem)
        assert match, prompt.stem
        return match[1]

    def complete(self, prompt: Prompt) -> str:
        entries = self._entries(prompt)
        target = self._stem_stimulus(prompt)
        best = max(entries, key=lambda e: semantic_similarity(e.stimulus, target))
        return best.signal + "'}"

    def score(self, prompt: Prompt, continuation: str) -> float:
        entries = self._entries(prompt)
        if prompt.stem.endswith("'word':'"):
            # word prefilled: prefer the stored word for the stem's stimulus
            expected = self.complete(prompt)
        else:
            # meaning prefilled: prefer the meaning whose stored word matches
            heard = self._stem_word(prompt)
            best = min(
                entries, key=lambda e: normalized_levenshtein(e.signal, heard)
            )
            s = best.stimulus
            expected = f"{s.shape},'colour':'{s.colour}','amount':{s.amount}}}"
        return -normalized_levenshtein(continuation, expected)


class TruncatingOracle(Agent):
    """Lookup-style learner whose every production is clipped to 4 characters.

    A transmitted language therefore converges to short signals, which this
    agent then reproduces exactly: generation 1 onward is easier to learn
    than generation 0.
    """

    MAX_LEN = 4

    def produce_signal(self, stimulus, task, rng):
        assert self.vocabulary is not None
        if stimulus in self.vocabulary:
            stored = self.vocabulary.signal_for(stimulus)
        else:
            ordered = [e for e in self.vocabulary]
            stored = min(
                ordered,
                key=lambda e: 3 - sum(x == y for x, y in zip(e.stimulus.attributes(), stimulus.attributes())),
            ).signal
        return stored[: self.MAX_LEN]

    def choose(self, probe, candidates, task, rng, exclude=None):
        assert self.vocabulary is not None
        if isinstance(probe, Stimulus):
            expected = self.produce_signal(probe, task, rng)
            return _argmin([normalized_levenshtein(expected, c) for c in candidates])
        expected = [self.produce_signal(c, task, rng) for c in candidates]
        return _argmin([normalized_levenshtein(probe, e) for e in expected])


class RepairOracle(Agent):
    """Regularises a growing prefix of the stimulus space round by round.

    Speaking productions start from the stored (holistic) vocabulary and
    switch to compositional rule signals for the first ``repair_step`` more
    stimuli each communication round; the rounds are inferred from the
    production count (each agent speaks all 15 training stimuli once per
    round). Labelling reproduces the stored signal exactly.
    """

    def __init__(self, agent_id: str, repair_step: int = 3, rules: CompositionalOracle | None = None):
        super().__init__(agent_id)
        self.repair_step = repair_step
        self.rules = rules or CompositionalOracle(agent_id + "-rules")
        self.speak_count = 0

    def _repaired(self) -> set[Stimulus]:
        train = set(self.vocabulary.stimuli())
        ordered = [s for s in enumerate_stimuli() if s in train]
        current_round = self.speak_count // len(ordered)  # 0-based
        return set(ordered[: self.repair_step * (current_round + 1)])

    def produce_signal(self, stimulus, task, rng):
        assert self.vocabulary is not None
        if task is PromptTask.LABELLING:
            return self.vocabulary.signal_for(stimulus)
        if stimulus in self.vocabulary and stimulus not in self._repaired():
            signal = self.vocabulary.signal_for(stimulus)
        else:
            signal = self.rules.rule_signal(stimulus)
        self.speak_count += 1
        return signal

    def _expected(self, stimulus, rng):
        if stimulus in self.vocabulary and stimulus not in self._repaired():
            return self.vocabulary.signal_for(stimulus)
        return self.rules.rule_signal(stimulus)

    def choose(self, probe, candidates, task, rng, exclude=None):
        if isinstance(probe, Stimulus):
            expected = self._expected(probe, rng)
            return _argmin([normalized_levenshtein(expected, c) for c in candidates])
        expected = [self._expected(c, rng) for c in candidates]
        return _argmin([normalized_levenshtein(probe, e) for e in expected])
