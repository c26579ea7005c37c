"""Rule-driven label assignment for audio corpora.

Corpus layouts vary (emotion codes embedded in filenames, one directory
per class, ...), so the mapping lives in a JSON rule file:

    {"mode": "directory"}
    {"mode": "filename-pattern",
     "pattern": "^\\\\d+-\\\\d+-(\\\\d+)",
     "codes": {"01": "neutral", "02": "happy"}}

``directory`` uses the parent directory name as the label. A
``filename-pattern`` rule applies the regex to the file name (without
extension) and maps capture group 1 through ``codes`` when given,
otherwise uses the group verbatim.
"""

from __future__ import annotations

import json
from pathlib import Path
import re


class LabelError(ValueError):
    """Rule file is invalid or a file's label cannot be resolved."""


class LabelRule:
    def __init__(self, doc: dict):
        self.mode = doc.get("mode")
        if self.mode == "directory":
            self.pattern = None
            self.codes = None
        elif self.mode == "filename-pattern":
            try:
                self.pattern = re.compile(doc["pattern"])
            except (KeyError, re.error) as exc:
                raise LabelError(f"bad pattern: {exc}") from exc
            if self.pattern.groups < 1:
                raise LabelError("pattern needs one capture group")
            self.codes = doc.get("codes")
        else:
            raise LabelError(f"unknown mode {self.mode!r}")

    @classmethod
    def load(cls, path) -> "LabelRule":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise LabelError(f"cannot load rule file {path}: {exc}") from exc
        return cls(doc)

    def label_for(self, audio_path) -> str:
        p = Path(audio_path)
        if self.mode == "directory":
            return p.parent.name
        match = self.pattern.search(p.stem)
        if not match:
            raise LabelError(f"{p.name}: no match for label pattern")
        code = match.group(1)
        if self.codes is None:
            return code
        try:
            return self.codes[code]
        except KeyError as exc:
            raise LabelError(f"{p.name}: unmapped label code {code!r}") from exc
