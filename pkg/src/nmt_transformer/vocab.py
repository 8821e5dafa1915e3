"""Word-level vocabularies with reserved special tokens."""

import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3


class EmptyCorpusError(ValueError):
    """Raised when a vocabulary is built from a corpus without tokens."""


class VocabularyFormatError(ValueError):
    """Raised when a vocabulary file is malformed."""


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token/id map.

    Ids are dense in ``[0, len)``; the specials ``<pad>``, ``<s>``, ``</s>``
    and ``<unk>`` always occupy ids 0-3, so the pad id doubles as the
    cross-entropy ignore id.

    Attributes:
        id_to_token: Token strings ordered by id.
        frequencies: Corpus frequency of each entry (0 for specials).
        min_freq: Frequency cutoff the vocabulary was built with.

    """

    id_to_token: tuple[str, ...]
    frequencies: tuple[int, ...]
    min_freq: int = 1
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Index tokens and check the special-token prefix."""
        if self.id_to_token[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            msg = f"Vocabulary must start with {SPECIAL_TOKENS}, got {self.id_to_token[:4]}"
            raise VocabularyFormatError(msg)
        if len(self.frequencies) != len(self.id_to_token):
            msg = "Vocabulary frequencies and tokens differ in length"
            raise VocabularyFormatError(msg)
        index = {token: i for i, token in enumerate(self.id_to_token)}
        if len(index) != len(self.id_to_token):
            msg = "Vocabulary contains duplicate tokens"
            raise VocabularyFormatError(msg)
        object.__setattr__(self, "token_to_id", index)

    @classmethod
    def build(cls, corpus_side: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocabulary":
        """Collect every token with frequency >= ``min_freq``.

        Entries are ordered by descending frequency with a lexicographic
        tie-break, after the four specials.

        Raises:
            EmptyCorpusError: If the corpus contains no tokens

        """
        counts: Counter[str] = Counter()
        for tokens in corpus_side:
            counts.update(tokens)
        if not counts:
            msg = "Cannot build a vocabulary from an empty corpus"
            raise EmptyCorpusError(msg)
        entries = sorted(
            (
                (token, freq)
                for token, freq in counts.items()
                if freq >= min_freq and token not in SPECIAL_TOKENS
            ),
            key=lambda item: (-item[1], item[0]),
        )
        vocab = cls(
            id_to_token=SPECIAL_TOKENS + tuple(token for token, _ in entries),
            frequencies=(0,) * len(SPECIAL_TOKENS) + tuple(freq for _, freq in entries),
            min_freq=min_freq,
        )
        logger.info(
            "Built vocabulary - size: %d, distinct_tokens: %d, min_freq: %d",
            len(vocab),
            len(counts),
            min_freq,
        )
        return vocab

    def __len__(self) -> int:
        """Number of entries, specials included."""
        return len(self.id_to_token)

    def __contains__(self, token: object) -> bool:
        """Whether the token has its own id."""
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        """Id of ``token``, or the unk id."""
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str], *, add_bos_eos: bool = False) -> list[int]:
        """Map tokens to ids, optionally wrapped in bos/eos."""
        ids = [self.token_to_id.get(token, UNK_ID) for token in tokens]
        return [BOS_ID, *ids, EOS_ID] if add_bos_eos else ids

    def decode(self, ids: Iterable[int], *, strip_specials: bool = False) -> list[str]:
        """Map ids back to tokens.

        With ``strip_specials`` pad, bos and eos are dropped; unk always
        decodes to the literal ``<unk>`` string.

        Raises:
            IndexError: If an id is outside the vocabulary

        """
        size = len(self.id_to_token)
        tokens: list[str] = []
        for raw_id in ids:
            token_id = int(raw_id)
            if not 0 <= token_id < size:
                msg = f"Token id {token_id} out of range for vocabulary of size {size}"
                raise IndexError(msg)
            if strip_specials and token_id in (PAD_ID, BOS_ID, EOS_ID):
                continue
            tokens.append(self.id_to_token[token_id])
        return tokens

    def save(self, path: Path) -> None:
        """Write ``token<TAB>frequency`` lines ordered by id."""
        path.write_text(self.dumps(), encoding="utf-8")
        logger.info("Saved vocabulary - path: %s, size: %d", path, len(self))

    def dumps(self) -> str:
        """Serialize to the vocabulary file format."""
        return "".join(
            f"{token}\t{freq}\n"
            for token, freq in zip(self.id_to_token, self.frequencies, strict=True)
        )

    @classmethod
    def loads(cls, text: str, min_freq: int = 1) -> "Vocabulary":
        """Parse the vocabulary file format; ids follow line order.

        Raises:
            VocabularyFormatError: If a line is malformed or specials are missing

        """
        tokens: list[str] = []
        freqs: list[int] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            token, sep, freq = line.rpartition("\t")
            if not sep or not token:
                msg = f"Line {lineno}: expected 'token<TAB>frequency', got {line!r}"
                raise VocabularyFormatError(msg)
            try:
                freqs.append(int(freq))
            except ValueError as err:
                msg = f"Line {lineno}: frequency {freq!r} is not an integer"
                raise VocabularyFormatError(msg) from err
            tokens.append(token)
        if len(tokens) < len(SPECIAL_TOKENS):
            msg = f"Vocabulary has only {len(tokens)} entries; the specials are missing"
            raise VocabularyFormatError(msg)
        return cls(id_to_token=tuple(tokens), frequencies=tuple(freqs), min_freq=min_freq)

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        """Read a vocabulary file written by :meth:`save`."""
        vocab = cls.loads(path.read_text(encoding="utf-8"))
        logger.info("Loaded vocabulary - path: %s, size: %d", path, len(vocab))
        return vocab
