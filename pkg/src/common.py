"""Common functions."""

from dataclasses import dataclass, field
import logging

import enlighten


LOGGER = logging.getLogger("embnorm")


###########################################################
# errors
###########################################################


class EmbnormError(Exception):
    """Base class of all errors raised by embnorm."""


class InvalidInputError(EmbnormError, ValueError):
    pass


class ConfigError(InvalidInputError):
    pass


class NumericError(EmbnormError, ArithmeticError):
    pass


class TrainingError(NumericError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"Epoch {epoch}: {message}")
        self.epoch = epoch


class ParseError(EmbnormError):
    """
    A file could not be parsed.

    >>> str(ParseError("bad magic", "a.evf", "byte 0"))
    'a.evf (byte 0): bad magic'
    >>> str(ParseError("bad label", "t.txt", "line 3"))
    't.txt (line 3): bad label'
    """

    def __init__(self, message: str, path, location: str | None = None):
        where = str(path) if location is None else f"{path} ({location})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.location = location


class UnsupportedVersionError(ParseError):
    pass


class StorageError(EmbnormError, OSError):
    pass


###########################################################
# progress
###########################################################


class CounterMock:  # pylint: disable=too-few-public-methods
    def update(self, *_):
        pass

    def close(self, *_):
        pass


def create_progress_bar(total: int, desc: str, no_progress_bars: bool):
    if no_progress_bars or total <= 0:
        return CounterMock()
    manager = enlighten.get_manager()
    progress_bar = manager.counter(
        total=total,
        desc=desc,
        bar_format="{desc:11s}{percentage:3.0f}%|{bar}| "
        "{count:{len_total}d}/{total:d} [{elapsed}<{eta}]",
        leave=False,
    )
    # https://python-enlighten.readthedocs.io/en/stable/faq.html#why-isn-t-my-progress-bar-displayed-until-update-is-called
    progress_bar.refresh()
    return progress_bar


###########################################################
# labels
###########################################################


def speaker_codes(speakers: list[str]) -> tuple[list[str], list[int]]:
    """
    Map speaker ids to dense integer codes, in sorted order of the ids.

    >>> speaker_codes(["b", "a", "b"])
    (['a', 'b'], [1, 0, 1])
    >>> speaker_codes([])
    ([], [])
    """
    names = sorted(set(speakers))
    index = {name: code for code, name in enumerate(names)}
    return names, [index[speaker] for speaker in speakers]


###########################################################
# tables
###########################################################


@dataclass
class MarkdownTable:
    """
    Construct a Markdown table from lists.

    >>> print(MarkdownTable([["a", "b"]], [["1", "2"]]).create_md())
    | a | b |
    | --- | --- |
    | 1 | 2 |
    """

    header_rows: list[list[str]] = field(default_factory=list)
    data_rows: list[list[str]] = field(default_factory=list)
    caption: str = ""

    def create_md(self) -> str:
        # column sanity check
        columns = [len(row) for row in self.header_rows + self.data_rows]
        if len(set(columns)) not in (0, 1):
            LOGGER.warning(f"Amount of columns differs: {columns}")

        def create_md_row(cells: list[str]) -> str:
            return "| " + " | ".join(cells) + " |"

        rows_md = []
        for row in self.header_rows:
            rows_md.append(create_md_row(row))
        if self.header_rows:
            separator = ["---"] * len(self.header_rows[0])
            rows_md.append(create_md_row(separator))
        for row in self.data_rows:
            rows_md.append(create_md_row(row))

        caption = self.caption + "\n\n" if self.caption else ""
        return caption + "\n".join(rows_md)
