"""Gene sentences: the fixed text template, vocabulary, and tokenizer.

Every gene/value pair is serialized as "The expression value of GENE is
VALUE." with the value printed to exactly two decimals. The numeric literal
occupies a single dedicated token slot; its magnitude travels alongside the
token ids as a float, never as digit subtokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, UnknownTokenError

TEMPLATE = "The expression value of {gene} is {value}."
MAX_TOKENS = 77

BOS = "<bos>"
EOS = "<eos>"
NUM = "<num>"  # shared base token of the value slot; magnitude rides on e_v
GENE = "<gene>"  # shared base token of the gene slot; identity rides on e_g
_WORDS = ("the", "expression", "value", "of", "is", ".")
_NUMERIC = re.compile(r"^[0-9]+(\.[0-9]+)?$")


def render_value(value: float) -> str:
    return f"{value:.2f}"


@dataclass(frozen=True)
class GeneSentence:
    """One serialized gene/value record plus its tokenization."""

    gene_id: int
    gene_symbol: str
    value: float
    text: str
    token_ids: tuple[int, ...]
    gene_pos: int
    value_pos: int


class Vocabulary:
    """Fixed vocabulary: specials, template words, then panel symbols in order."""

    def __init__(self, panel: Sequence[str]):
        panel = tuple(panel)
        if len(set(panel)) != len(panel):
            raise ContractViolation("gene panel contains duplicate symbols")
        self.panel = panel
        self.tokens: tuple[str, ...] = (BOS, EOS, NUM, GENE) + _WORDS + panel
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        self.gene_ids = {sym: i for i, sym in enumerate(panel)}
        self.gene_base_id = self.ids[GENE]

    def __len__(self) -> int:
        return len(self.tokens)

    def tokenize(self, text: str) -> tuple[tuple[int, ...], int, int]:
        """Token ids for a template-shaped sentence plus its two slot positions.

        Returns (ids, gene_pos, value_pos). Unknown words raise; so does text
        that does not carry exactly one gene slot and one value slot.
        """
        words: list[str] = []
        for chunk in text.split():
            if len(chunk) > 1 and chunk.endswith("."):
                words.extend([chunk[:-1], "."])
            else:
                words.append(chunk)
        ids = [self.ids[BOS]]
        gene_pos: list[int] = []
        value_pos: list[int] = []
        for word in words:
            if word in self.gene_ids:
                gene_pos.append(len(ids))
                ids.append(self.ids[word])
            elif word.lower() in self.ids:
                ids.append(self.ids[word.lower()])
            elif _NUMERIC.match(word):
                value_pos.append(len(ids))
                ids.append(self.ids[NUM])
            else:
                raise UnknownTokenError(f"out-of-vocabulary word: '{word}'")
        ids.append(self.ids[EOS])
        if len(gene_pos) != 1 or len(value_pos) != 1:
            raise ContractViolation(
                f"expected exactly one gene slot and one value slot, got "
                f"{len(gene_pos)} and {len(value_pos)} in {text!r}"
            )
        return tuple(ids), gene_pos[0], value_pos[0]

    def save(self, path: str | Path) -> None:
        lines = [f"{i}\t{tok}" for i, tok in enumerate(self.tokens)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        toks = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            idx, tok = line.split("\t")
            toks.append((int(idx), tok))
        toks.sort()
        tokens = tuple(t for _, t in toks)
        base = (BOS, EOS, NUM, GENE) + _WORDS
        if tokens[: len(base)] != base:
            raise ContractViolation("vocabulary file does not start with the fixed tokens")
        return cls(tokens[len(base):])


def make_sentence(symbol: str, value: float, vocab: Vocabulary,
                  max_tokens: int = MAX_TOKENS) -> GeneSentence:
    """Render, round, and tokenize one gene/value pair.

    The stored value is the float the rendered text shows (two decimals), so
    the training text and the zero-shot template grid share one format.
    """
    if not np.isfinite(value):
        raise ContractViolation(f"non-finite expression value for {symbol}")
    rendered = render_value(float(value))
    text = TEMPLATE.format(gene=symbol, value=rendered)
    ids, gene_pos, value_pos = vocab.tokenize(text)
    if len(ids) > max_tokens:
        raise ContractViolation(
            f"sentence tokenizes to {len(ids)} tokens, above the cap of {max_tokens}"
        )
    return GeneSentence(
        gene_id=vocab.gene_ids[symbol],
        gene_symbol=symbol,
        value=float(rendered),
        text=text,
        token_ids=ids,
        gene_pos=gene_pos,
        value_pos=value_pos,
    )


def build_sentences(expression: np.ndarray, panel: Sequence[str],
                    vocab: Vocabulary | None = None) -> list[GeneSentence]:
    """One sentence per panel gene, in panel order."""
    expression = np.asarray(expression, dtype=np.float64)
    if expression.ndim != 1 or len(expression) != len(panel):
        raise ContractViolation(
            f"expression length {expression.shape} does not match panel size {len(panel)}"
        )
    if vocab is None:
        vocab = Vocabulary(panel)
    return [make_sentence(sym, expression[i], vocab) for i, sym in enumerate(panel)]
