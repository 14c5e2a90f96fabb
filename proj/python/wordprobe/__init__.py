"""Python access to the wordprobe core: corpus helpers, span F1, attention
statistics, checkpoint tracing, trace archives and the CLI."""

from ._core import (
    Checkpoint,
    WordprobeError,
    bmes,
    decode_spans,
    format_baseline,
    parse_line,
    pattern_names,
    random_baseline,
    read_dump,
    run_cli,
    seg_f1,
    sentence_stats,
)

__all__ = [
    "Checkpoint",
    "WordprobeError",
    "bmes",
    "decode_spans",
    "format_baseline",
    "parse_line",
    "pattern_names",
    "random_baseline",
    "read_dump",
    "run_cli",
    "seg_f1",
    "sentence_stats",
]
