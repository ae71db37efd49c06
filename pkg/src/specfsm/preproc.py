"""Document cleaning and section-aware segmentation.

Raw specification text is cleaned with line rules, split into paragraphs,
mapped onto its dotted section hierarchy and merged bottom-up: the leaf
children of every section are folded into that section so each window is a
coherent chunk of the document.
"""

from __future__ import annotations

import bisect
import dataclasses
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import EmptyAfterClean, NoSectionsFound

log = logging.getLogger(__name__)

DEFAULT_MAX_WORDS = 3000

# Each rule is matched against single lines; a matching line is dropped.
DEFAULT_CLEAN_RULES: tuple[str, ...] = (
    # table of contents
    r"^\s*(?:Table of )?Contents\s*$",
    r"^.*\S[ \t]*\.{4,}[ \t]*\d+\s*$",
    # page headers / footers
    r"^\s*3GPP TS \d+\.\d+ V\d+\.\d+\.\d+ \(\d{4}-\d{2}\).*$",
    r"^\s*3GPP\s*$",
    r"^\s*Release \d+\s+\d+\s*$",
    r"^\s*Page \d+(?: of \d+)?\s*$",
    r"^\s*\d+\s*$",
    # figure / table captions
    r"^\s*(?:Figure|Table)\s+[A-Z]?\d+(?:\.\d+)*(?:-\d+)?[a-z]?\s*:.*$",
)

_FOOTNOTE_MARK = re.compile(r"(?<=\w)[¹²³⁴⁵⁶⁷⁸⁹⁰]+")

_HEADING = re.compile(
    r"^(?P<num>\d+(?:\.\d+)*|[A-Z](?:\.\d+)+)[ \t]+(?P<title>\S.*?)[ \t]*$"
)
_ANNEX = re.compile(
    r"^Annex[ \t]+(?P<num>[A-Z])\b(?:[^:\n]*:[ \t]*(?P<title>\S.*?))?[ \t]*$"
)


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    text: str
    protocol: str = ""
    spec_version: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")


class Heading(NamedTuple):
    number: str
    title: str
    offset: int


@dataclass(eq=False)
class SectionNode:
    number: str
    title: str
    depth: int
    paragraphs: list[str] = field(default_factory=list)
    children: list["SectionNode"] = field(default_factory=list)
    merged_content: str | None = None
    all_children_merged: bool = False
    # True when the direct parent number was absent and the node was
    # attached to a more distant ancestor.
    gap: bool = False
    offset: int = -1
    paragraph_ids: list[int] = field(default_factory=list, repr=False)
    parent: "SectionNode | None" = field(default=None, repr=False)

    @property
    def is_root(self) -> bool:
        return self.parent is None and self.number == ""

    @property
    def heading(self) -> str:
        return f"{self.number} {self.title}".strip()

    def walk(self) -> Iterator["SectionNode"]:
        """Pre-order traversal, self first."""
        yield self
        for child in self.children:
            yield from child.walk()

    def find(self, number: str) -> "SectionNode | None":
        return next((n for n in self.walk() if n.number == number), None)


@dataclass(frozen=True)
class Window:
    window_id: int
    section_numbers: tuple[str, ...]
    text: str
    word_count: int
    paragraphs: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "section_numbers": list(self.section_numbers),
            "text": self.text,
            "word_count": self.word_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Window":
        text = data["text"]
        return cls(
            window_id=int(data["window_id"]),
            section_numbers=tuple(data["section_numbers"]),
            text=text,
            word_count=len(text.split()),
        )


def word_count(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------- cleaning


def clean_document(raw: RawDocument, rules: Sequence[str] | None = None) -> RawDocument:
    """Strip non-body noise (ToC, page furniture, captions, footnote marks).

    Lines matching any rule are dropped and runs of three or more blank lines
    collapse to one. Text with nothing to remove is returned unchanged.
    """
    patterns = [re.compile(r) for r in (DEFAULT_CLEAN_RULES if rules is None else rules)]
    text = _FOOTNOTE_MARK.sub("", raw.text)

    kept = [
        line
        for line in text.splitlines(keepends=True)
        if not any(p.search(line.rstrip("\r\n")) for p in patterns)
    ]

    out: list[str] = []
    i = 0
    while i < len(kept):
        if kept[i].strip():
            out.append(kept[i])
            i += 1
            continue
        j = i
        while j < len(kept) and not kept[j].strip():
            j += 1
        out.extend(kept[i:j] if j - i < 3 else ["\n"])
        i = j

    cleaned = "".join(out)
    if not cleaned.strip():
        raise EmptyAfterClean(f"document {raw.doc_id!r} has no body text after cleaning")
    return dataclasses.replace(raw, text=cleaned)


# ---------------------------------------------------------------- scanning


def _match_heading(line: str) -> tuple[str, str] | None:
    m = _ANNEX.match(line)
    if m:
        return m["num"], m["title"] or f"Annex {m['num']}"
    m = _HEADING.match(line)
    if not m:
        return None
    title = m["title"]
    # body lines that merely start with a number end like sentences
    if title[-1] in ".,;:" or not any(c.isalpha() for c in title):
        return None
    return m["num"], title


def _scan(text: str) -> Iterator[tuple[str, int, tuple]]:
    """Yield ("heading", offset, (number, title)) and ("para", offset, (text,))."""
    offset = 0
    para: list[str] = []
    para_start = 0
    for line in text.splitlines(keepends=True):
        body = line.rstrip("\r\n")
        heading = _match_heading(body) if body.strip() else None
        if heading or not body.strip():
            if para:
                yield "para", para_start, ("\n".join(para),)
                para = []
            if heading:
                yield "heading", offset, heading
        else:
            if not para:
                para_start = offset
            para.append(body)
        offset += len(line)
    if para:
        yield "para", para_start, ("\n".join(para),)


def body_paragraphs(text: str) -> list[str]:
    """Paragraphs of ``text`` excluding heading lines, in document order."""
    return [payload[0] for kind, _, payload in _scan(text) if kind == "para"]


def extract_section_numbers(doc: RawDocument) -> list[Heading]:
    headings = [
        Heading(payload[0], payload[1], off)
        for kind, off, payload in _scan(doc.text)
        if kind == "heading"
    ]
    if not headings:
        raise NoSectionsFound(f"no section headings found in {doc.doc_id!r}")
    return headings


# ---------------------------------------------------------------- tree


def _link(sections: Iterable) -> tuple[SectionNode, list[SectionNode]]:
    root = SectionNode(number="", title="", depth=0)
    nodes: list[SectionNode] = []
    seen: dict[str, SectionNode] = {}
    for sec in sections:
        if isinstance(sec, SectionNode):
            number, title, offset = sec.number, sec.title, sec.offset
        else:
            number, title = sec[0], sec[1]
            offset = sec[2] if len(sec) > 2 else -1
        parts = number.split(".")
        node = SectionNode(number=number, title=title, depth=len(parts), offset=offset)

        parent, gap = root, len(parts) > 1
        for k in range(len(parts) - 1, 0, -1):
            candidate = seen.get(".".join(parts[:k]))
            if candidate is not None:
                parent, gap = candidate, k != len(parts) - 1
                break
        if gap:
            log.debug("section %s attached under %r (missing ancestor)", number, parent.number)
        node.parent, node.gap = parent, gap
        parent.children.append(node)
        seen[number] = node
        nodes.append(node)
    return root, nodes


def build_section_tree(sections: Iterable) -> SectionNode:
    """Build the section hierarchy under a synthetic root.

    ``sections`` holds ``(number, title[, offset])`` tuples in document order.
    A section whose parent number never appeared is attached to its deepest
    existing ancestor (or the root) with ``gap`` set.
    """
    root, _ = _link(sections)
    return root


def map_paragraphs_to_sections(doc: RawDocument, sections: Sequence[Heading]) -> SectionNode:
    """Attach every body paragraph to the nearest preceding heading.

    Returns the synthetic root; its children are the top-level sections and
    its own ``paragraphs`` hold any text before the first heading.
    """
    root, nodes = _link(sections)
    offsets = [n.offset for n in nodes]
    index = 0
    for kind, off, payload in _scan(doc.text):
        if kind != "para":
            continue
        pos = bisect.bisect_right(offsets, off) - 1
        owner = root if pos < 0 else nodes[pos]
        owner.paragraphs.append(payload[0])
        owner.paragraph_ids.append(index)
        index += 1
    return root


def build_section_index(root: SectionNode) -> dict[str, str]:
    """Map section number to the text of that section and its descendants."""
    index: dict[str, str] = {}
    for node in root.walk():
        if node.is_root:
            continue
        blocks = [_render(n, n.paragraphs) for n in node.walk()]
        index.setdefault(node.number, "\n\n".join(blocks))
    return index


# ---------------------------------------------------------------- merging


def _render(node: SectionNode, paragraphs: Sequence[str]) -> str:
    if node.is_root:
        return "\n\n".join(paragraphs)
    return "\n\n".join([node.heading, *paragraphs])


class _Chunk(NamedTuple):
    numbers: tuple[str, ...]
    blocks: tuple[str, ...]
    paragraphs: tuple[str, ...]
    first: int

    @property
    def text(self) -> str:
        return "\n\n".join(self.blocks)


def _chunk(nodes: Sequence[SectionNode]) -> _Chunk:
    numbers, blocks, paras, ids = [], [], [], []
    for node in nodes:
        if not node.is_root:
            numbers.append(node.number)
        blocks.append(_render(node, node.paragraphs))
        paras.extend(node.paragraphs)
        ids.extend(node.paragraph_ids)
    return _Chunk(tuple(numbers), tuple(blocks), tuple(paras), min(ids, default=-1))


def _leaf_children(node: SectionNode) -> list[SectionNode]:
    return [c for c in node.children if not c.children]


def merge_windows(root: SectionNode, max_words: int = DEFAULT_MAX_WORDS) -> list[Window]:
    """Merge leaf sections into their parents and emit the resulting windows.

    A parent whose merged text exceeds ``max_words`` is emitted as its own
    paragraphs plus one window per leaf child. Non-leaf children keep their
    own windows. Windows are ordered by their first paragraph.
    """
    if max_words < 1:
        raise ValueError("max_words must be >= 1")

    for leaf in (n for n in root.walk() if not n.children and not n.is_root):
        parent = leaf.parent
        if parent is None or parent.is_root or parent.all_children_merged:
            continue
        parent.merged_content = _chunk([parent, *_leaf_children(parent)]).text
        parent.all_children_merged = True

    chunks: list[_Chunk] = []
    for node in root.walk():
        if node.is_root:
            chunks.append(_chunk([node]))
        elif node.all_children_merged:
            merged = _chunk([node, *_leaf_children(node)])
            if word_count(merged.text) <= max_words:
                chunks.append(merged)
            else:
                chunks.append(_chunk([node]))
                chunks.extend(_chunk([leaf]) for leaf in _leaf_children(node))
        elif node.children:
            # every child is itself a parent; only the node's own text is left
            chunks.append(_chunk([node]))
        elif node.parent is not None and node.parent.is_root:
            chunks.append(_chunk([node]))

    chunks = sorted((c for c in chunks if c.paragraphs), key=lambda c: c.first)
    return [
        Window(
            window_id=i,
            section_numbers=c.numbers,
            text=c.text,
            word_count=word_count(c.text),
            paragraphs=c.paragraphs,
        )
        for i, c in enumerate(chunks)
    ]


def segment(
    raw: RawDocument,
    max_words: int = DEFAULT_MAX_WORDS,
    rules: Sequence[str] | None = None,
) -> tuple[list[Window], SectionNode]:
    """Clean, build the section tree and merge windows in one call."""
    doc = clean_document(raw, rules)
    sections = extract_section_numbers(doc)
    root = map_paragraphs_to_sections(doc, sections)
    return merge_windows(root, max_words), root
