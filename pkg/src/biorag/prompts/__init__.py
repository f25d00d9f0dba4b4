"""Prompt templates and rendering.

Templates live as .txt files next to this module (overridable per config via
a directory of same-named files). The three organism-facing prompts
(contextualize, caption, respond) get a fixed run of 256 filler dots appended
at render time; the dots are stored in their own file, not inlined here.

Substitution is literal string replacement of {placeholder} markers, so brace
characters in surrounding prose are harmless.
"""

from __future__ import annotations

import hashlib
import re
from importlib.resources import files
from pathlib import Path

from ..errors import ConfigError

TEMPLATE_NAMES = (
    "contextualize",
    "caption",
    "respond",
    "multiquery",
    "eval_claims",
    "eval_support",
    "eval_questions",
    "thinking_dots",
)

#: Templates that get the thinking-dot filler appended when rendered.
_DOTTED = {"contextualize", "caption", "respond"}

_CONTEXT_BLOCK = re.compile(r"<context>\n\{context\}\n</context>\n*")

VISION_CAPTION_SUBSTITUTE = (
    "The organism to classify is shown in the attached image. Use the "
    "visible features of the organism in the image in place of a written caption."
)


class PromptLibrary:
    """Loads, hashes, and renders the pipeline's prompt templates."""

    def __init__(self, directory: Path | str | None = None):
        self._texts: dict[str, str] = {}
        for name in TEMPLATE_NAMES:
            if directory is not None:
                path = Path(directory) / f"{name}.txt"
                if not path.is_file():
                    raise ConfigError(f"prompt template missing: {path}")
                raw = path.read_text(encoding="utf-8")
            else:
                raw = files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
            self._texts[name] = raw.replace("\r\n", "\n")
        dots = self._texts["thinking_dots"].strip()
        if not dots or set(dots) != {"."}:
            raise ConfigError("thinking_dots.txt must contain only dot characters")
        self._dots = dots

    def template(self, name: str) -> str:
        return self._texts[name]

    def hashes(self) -> dict[str, str]:
        """sha256 of each template file, for run manifests."""
        return {
            name: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for name, text in sorted(self._texts.items())
        }

    def _finish(self, name: str, text: str) -> str:
        if name in _DOTTED:
            return text.rstrip("\n") + "\n\n" + self._dots
        return text.rstrip("\n")

    def render_contextualize(self, doc_content: str, chunk_content: str) -> str:
        text = (
            self.template("contextualize")
            .replace("{doc_content}", doc_content)
            .replace("{chunk_content}", chunk_content)
        )
        return self._finish("contextualize", text)

    def render_caption(self) -> str:
        return self._finish("caption", self.template("caption"))

    def render_response(
        self,
        caption: str,
        context_block: str | None,
        vision: bool = False,
    ) -> str:
        """Response prompt; context_block None removes the context section.

        vision=True swaps the caption for a pointer at the attached image
        (the context section is removed as well).
        """
        text = self.template("respond")
        if vision:
            context_block = None
            caption = VISION_CAPTION_SUBSTITUTE
        if context_block is None:
            text = _CONTEXT_BLOCK.sub("", text)
        else:
            text = text.replace("{context}", context_block)
        text = text.replace("{caption}", caption)
        return self._finish("respond", text)

    def render_multiquery(self, query: str, n: int) -> str:
        text = self.template("multiquery").replace("{n}", str(n)).replace("{query}", query)
        return self._finish("multiquery", text)

    def render_claims(self, answer: str) -> str:
        return self._finish("eval_claims", self.template("eval_claims").replace("{answer}", answer))

    def render_support(self, claims: list[str], contexts: list[str]) -> str:
        numbered = "\n".join(f"{i}. {claim}" for i, claim in enumerate(claims, start=1))
        blocks = "\n\n".join(f"<context>\n{c}\n</context>" for c in contexts)
        text = (
            self.template("eval_support")
            .replace("{claims}", numbered)
            .replace("{contexts}", blocks)
        )
        return self._finish("eval_support", text)

    def render_questions(self, answer: str, n: int) -> str:
        text = self.template("eval_questions").replace("{n}", str(n)).replace("{answer}", answer)
        return self._finish("eval_questions", text)
