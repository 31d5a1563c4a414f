from typing import List, Optional, Union

from loguru import logger

from data.models import Example, Split, TaskDataset
from exceptions import ConfigurationError, DomainError
from seeding import rng_for


class CandidatePoolBuilder:
    """Fixed evaluation pools for one split: the gold plus sampled distractor golds.

    Distractors are drawn without replacement from the split's distinct gold texts
    (excluding the example's own gold), and the gold lands at a seeded position.
    """

    def __init__(self, dataset: TaskDataset, split: Union[Split, str], seed: int):
        self.dataset = dataset
        self.split = Split(split)
        self.seed = seed
        self.count = dataset.eval_candidate_count
        self._golds = dataset.distinct_golds(self.split)
        self._index = {gold: i for i, gold in enumerate(self._golds)}
        if self.count > 1 and len(self._golds) < self.count:
            raise ConfigurationError(
                f"{dataset.name}/{self.split.value}: {len(self._golds)} distinct gold texts, "
                f"need {self.count} for the evaluation pool"
            )

    def pool_for(self, example: Example) -> List[List[int]]:
        if not example.gold_text:
            raise ConfigurationError(f"example {example.id!r} has no gold text to rank")
        gold = tuple(example.gold_text)
        if self.count == 1:
            return [list(gold)]
        rng = rng_for(self.seed, "candidates", self.dataset.name, example.id)
        others = [g for g in self._golds if g != gold]
        if len(others) < self.count - 1:
            raise ConfigurationError(
                f"{self.dataset.name}: only {len(others)} distractors for example {example.id!r}"
            )
        picks = rng.choice(len(others), size=self.count - 1, replace=False)
        pool = [list(others[i]) for i in picks]
        position = int(rng.integers(self.count))
        pool.insert(position, list(gold))
        return pool

    def gold_position(self, example: Example, pool: List[List[int]]) -> int:
        return pool.index(list(example.gold_text))


def _split_of(dataset: TaskDataset, example: Example) -> Split:
    for split in Split:
        if any(e.id == example.id for e in dataset.split(split)):
            return split
    raise ConfigurationError(f"example {example.id!r} is not part of dataset {dataset.name!r}")


def build_eval_candidates(
    example: Example,
    dataset: TaskDataset,
    seed: int,
    split: Optional[Union[Split, str]] = None,
) -> List[List[int]]:
    """Candidate token lists of length ``eval_candidate_count`` with the gold exactly once."""
    split = Split(split) if split is not None else _split_of(dataset, example)
    return CandidatePoolBuilder(dataset, split, seed).pool_for(example)


def downsample(dataset: TaskDataset, size: Union[int, float], seed: int) -> TaskDataset:
    """Seeded uniform subsample of the train split; valid and test are untouched.

    ``size`` is either a fraction in (0, 1] or an absolute example count >= 1.
    """
    n_train = len(dataset.train)
    if isinstance(size, bool):
        raise DomainError("downsample size must be a number")
    if isinstance(size, int):
        target = size
        if target < 1:
            raise DomainError(f"downsample size must be at least 1, got {target}")
    else:
        if not 0.0 < float(size) <= 1.0:
            raise DomainError(f"downsample fraction must lie in (0, 1], got {size}")
        target = max(1, int(round(float(size) * n_train)))
    if target > n_train:
        raise DomainError(f"downsample target {target} exceeds train size {n_train}")

    if target == n_train:
        train = list(dataset.train)
    else:
        rng = rng_for(seed, "downsample", dataset.name, target)
        keep = sorted(int(i) for i in rng.choice(n_train, size=target, replace=False))
        train = [dataset.train[i] for i in keep]
    logger.info(f"Downsampled {dataset.name!r} train split {n_train} -> {target}")
    return dataset.model_copy(update={"train": train})


def downsample_curve(n_points: int = 5, smallest: float = 0.25) -> List[float]:
    """Evenly spaced train fractions from ``smallest`` to 1.0."""
    if n_points < 1 or not 0.0 < smallest <= 1.0:
        raise DomainError(f"invalid curve: n_points={n_points} smallest={smallest}")
    if n_points == 1:
        return [1.0]
    step = (1.0 - smallest) / (n_points - 1)
    return [round(smallest + i * step, 6) for i in range(n_points)]
