"""Prompt template registry.

Eight templates ship as data files under ``polymath/prompts/``, one JSON file
per template plus a golden checksum manifest. The fixed text is preserved
byte-for-byte (including the historical "releveant" spelling in
evidentiary_expertise); rendering substitutes single-brace ``{name}`` sites
and touches nothing else, so doubled braces like ``{{tags:...}}`` pass
through as literal text.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import ExtraBindingError, MissingBindingError, UnknownTemplateError

TEMPLATE_IDS = (
    "plan_query_v1",
    "plan_query_v2",
    "evidentiary_expertise",
    "perspective_synthesis",
    "evidence_rag",
    "gap_assessment",
    "gap_bridge",
    "background_expertise",
)

# A placeholder is {name} with a closing brace right after the name; brace
# runs like {{ ... }} never match because the char after '{' is not a letter
# or the name is not immediately followed by '}'.
_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    body_text: str
    required_bindings: frozenset[str]


def _find_placeholders(text: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER.findall(text))


class PromptRegistry:
    """Immutable after construction; safe to share."""

    def __init__(self):
        self._templates: dict[str, PromptTemplate] = {}
        pkg = resources.files("polymath") / "prompts"
        for tid in TEMPLATE_IDS:
            raw = json.loads((pkg / f"{tid}.json").read_text(encoding="utf-8"))
            body = raw["body"]
            system = raw["system"]
            self._templates[tid] = PromptTemplate(
                template_id=tid,
                system_text=system,
                body_text=body,
                required_bindings=_find_placeholders(system) | _find_placeholders(body),
            )
        self._golden = json.loads((pkg / "checksums.json").read_text(encoding="utf-8"))

    def template(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplateError(template_id) from None

    def ids(self) -> tuple[str, ...]:
        return TEMPLATE_IDS

    def render(self, template_id: str, bindings: dict[str, str]) -> tuple[str, str]:
        """Substitute bindings into a template; returns (system, body).

        Bindings must cover the template's placeholders exactly. Substitution
        is single-pass: braces in binding values are not re-interpreted.
        """
        tpl = self.template(template_id)
        missing = tpl.required_bindings - bindings.keys()
        if missing:
            raise MissingBindingError(sorted(missing)[0])
        extra = bindings.keys() - tpl.required_bindings
        if extra:
            raise ExtraBindingError(sorted(extra)[0])

        def _sub(match: re.Match) -> str:
            name = match.group(1)
            if name in tpl.required_bindings:
                return str(bindings[name])
            return match.group(0)

        return tpl.system_text, _PLACEHOLDER.sub(_sub, tpl.body_text)

    def checksum(self, template_id: str) -> str:
        tpl = self.template(template_id)
        blob = (tpl.system_text + "\x00" + tpl.body_text).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def golden_checksums(self) -> dict[str, str]:
        return dict(self._golden)


_default_registry: PromptRegistry | None = None


def default_registry() -> PromptRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = PromptRegistry()
    return _default_registry
