import json
import os
from pathlib import Path
from typing import Iterable, List, Union

from loguru import logger
from pydantic import ValidationError

from data.models import FORMAT_VERSION, DatasetHeader, Example, Split, TaskDataset
from exceptions import CompatibilityError, DataError, ParseError

PathLike = Union[str, Path]


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


class DatasetRepository:
    """Reads and writes line-delimited dataset files.

    Line 1 is the header record; every following line is one example tagged with its
    split. Saving a loaded dataset reproduces the file byte for byte.
    """

    encoding = "utf-8"

    def load_dataset(self, path: PathLike) -> TaskDataset:
        """Parse and validate a dataset file."""
        path = Path(path)
        if not path.is_file():
            raise DataError(f"dataset file not found: {path}")
        with path.open("r", encoding=self.encoding, newline="\n") as handle:
            lines = handle.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise ParseError("empty file, expected a header record", line_no=1, path=str(path))

        header = self._parse_header(lines[0], path)
        splits = {split: [] for split in Split}
        for line_no, line in enumerate(lines[1:], start=2):
            split, example = self._parse_example(line, line_no, path)
            splits[split].append(example)

        dataset = TaskDataset(
            name=header.name,
            head=header.head,
            d_img_global=header.d_img_global,
            d_img_regional=header.d_img_regional,
            n_regions=header.n_regions,
            style_space=header.style_space,
            eval_candidate_count=header.eval_candidate_count,
            answers=header.answers,
            train=splits[Split.TRAIN],
            valid=splits[Split.VALID],
            test=splits[Split.TEST],
        )
        dataset.validate_invariants()
        logger.info(
            f"Loaded dataset {dataset.name!r} from {path}: "
            f"{len(dataset.train)}/{len(dataset.valid)}/{len(dataset.test)} examples"
        )
        return dataset

    def save_dataset(self, dataset: TaskDataset, path: PathLike) -> Path:
        """Write ``dataset`` atomically; returns the path written."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", encoding=self.encoding, newline="\n") as handle:
            for line in self.iter_lines(dataset):
                handle.write(line)
                handle.write("\n")
        os.replace(tmp, path)
        logger.debug(f"Saved dataset {dataset.name!r} to {path}")
        return path

    def dumps(self, dataset: TaskDataset) -> bytes:
        """The exact bytes ``save_dataset`` writes."""
        return "".join(f"{line}\n" for line in self.iter_lines(dataset)).encode(self.encoding)

    def iter_lines(self, dataset: TaskDataset) -> Iterable[str]:
        yield _dumps(dataset.header.model_dump(mode="json"))
        for split in Split:
            for example in dataset.split(split):
                record = {"kind": "example", "split": split.value}
                record.update(example.model_dump(mode="json"))
                yield _dumps(record)

    def _parse_header(self, line: str, path: Path) -> DatasetHeader:
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed header: {e.msg}", line_no=1, path=str(path)) from e
        if isinstance(raw, dict) and raw.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
            raise CompatibilityError(
                f"{path}: dataset format version {raw.get('format_version')} "
                f"is not supported (expected {FORMAT_VERSION})"
            )
        try:
            return DatasetHeader.model_validate(raw)
        except ValidationError as e:
            raise ParseError(f"invalid header: {e.errors()[0]['msg']}", line_no=1, path=str(path)) from e

    def _parse_example(self, line: str, line_no: int, path: Path):
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed record: {e.msg}", line_no=line_no, path=str(path)) from e
        if not isinstance(raw, dict) or raw.pop("kind", None) != "example":
            raise ParseError("expected an example record", line_no=line_no, path=str(path))
        try:
            split = Split(raw.pop("split", None))
        except ValueError as e:
            raise ParseError("missing or unknown split", line_no=line_no, path=str(path)) from e
        try:
            return split, Example.model_validate(raw)
        except ValidationError as e:
            error = e.errors()[0]
            location = ".".join(str(p) for p in error["loc"])
            raise ParseError(f"invalid example ({location}): {error['msg']}", line_no=line_no, path=str(path)) from e


def load_dataset(path: PathLike) -> TaskDataset:
    return DatasetRepository().load_dataset(path)


def save_dataset(dataset: TaskDataset, path: PathLike) -> Path:
    return DatasetRepository().save_dataset(dataset, path)


def load_datasets(paths: Iterable[PathLike]) -> List[TaskDataset]:
    repository = DatasetRepository()
    return [repository.load_dataset(p) for p in paths]
