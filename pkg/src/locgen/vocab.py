"""Closed vocabulary shared by the scene generator, the encoders, and the generator.

Scene words come from a fixed 200-word list; numbers cover 1-999. The text
encoder sees whole-word ids (out-of-vocabulary words collapse to one of two
unknown ids that preserve the numeric/alphabetic distinction). The answer
generator additionally decomposes numbers into digit tokens and unknown words
into character tokens, so single-character recognition errors stay visible to
it.
"""

from __future__ import annotations

COLORS = ("red", "blue", "green", "yellow", "black", "white", "purple", "orange")
CATEGORIES = ("number", "word")
FONT_SIZES = ("small", "large")
POSITIONS = ("top left", "top right", "bottom left", "bottom right", "center")

TEMPLATE_WORDS = (
    "what",
    "is",
    "are",
    "the",
    "in",
    "at",
    "written",
    "words",
    "top",
    "left",
    "right",
    "bottom",
    "center",
    "?",
) + COLORS + CATEGORIES + FONT_SIZES

WORD_LIST = (
    "apple", "banana", "cherry", "grape", "lemon", "mango", "melon", "peach", "pear", "plum",
    "bread", "butter", "cheese", "cream", "honey", "pasta", "pepper", "salt", "sugar", "toast",
    "river", "ocean", "lake", "cloud", "storm", "thunder", "breeze", "frost", "shadow", "sunset",
    "maple", "cedar", "birch", "willow", "fern", "moss", "tulip", "daisy", "clover", "ivy",
    "tiger", "lion", "bear", "wolf", "fox", "deer", "otter", "badger", "rabbit", "mouse",
    "eagle", "falcon", "heron", "sparrow", "robin", "crow", "owl", "swan", "goose", "duck",
    "salmon", "trout", "shark", "whale", "dolphin", "crab", "lobster", "oyster", "squid", "eel",
    "hammer", "chisel", "wrench", "pliers", "saw", "drill", "ladder", "bucket", "rope", "nail",
    "table", "chair", "sofa", "shelf", "drawer", "mirror", "carpet", "curtain", "lamp", "clock",
    "engine", "wheel", "brake", "clutch", "piston", "gear", "axle", "pedal", "spring", "valve",
    "violin", "piano", "flute", "drum", "trumpet", "cello", "banjo", "harp", "oboe", "organ",
    "copper", "iron", "silver", "gold", "bronze", "nickel", "zinc", "cobalt", "tin", "lead",
    "planet", "comet", "meteor", "nebula", "galaxy", "orbit", "lunar", "solar", "cosmic", "star",
    "doctor", "nurse", "farmer", "baker", "tailor", "sailor", "pilot", "miner", "smith", "clerk",
    "castle", "tower", "bridge", "tunnel", "harbor", "market", "temple", "palace", "garden", "plaza",
    "pencil", "paper", "folder", "stamp", "ribbon", "candle", "basket", "bottle", "kettle", "spoon",
    "jacket", "collar", "button", "pocket", "sleeve", "buckle", "sandal", "mitten", "scarf", "glove",
    "winter", "summer", "autumn", "season", "harvest", "meadow", "valley", "canyon", "cliff", "dune",
    "candy", "cookie", "muffin", "waffle", "bacon", "noodle", "salad", "soup", "stew", "pie",
    "anchor", "compass", "rudder", "mast", "cabin", "cargo", "ferry", "canoe", "kayak", "yacht",
)

MAX_NUMBER = 999

PAD, BOS, EOS, SEP, WSEP, CLS, UNK_WORD, UNK_NUM = (
    "<pad>", "<bos>", "<eos>", "<sep>", "<wsep>", "<cls>", "<unk:w>", "<unk:n>",
)
SPECIALS = (PAD, BOS, EOS, SEP, WSEP, CLS, UNK_WORD, UNK_NUM)

_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_DIGITS = "0123456789"


def is_number_word(word: str) -> bool:
    return word.isdigit()


class Vocabulary:
    """Id space: specials, template words, scene words, numbers, characters."""

    def __init__(self):
        entries = list(SPECIALS)
        entries.extend(TEMPLATE_WORDS)
        entries.extend(WORD_LIST)
        entries.extend(str(n) for n in range(1, MAX_NUMBER + 1))
        self._char_offset = len(entries)
        entries.extend(f"#{c}" for c in _LETTERS + _DIGITS)
        self._entries = entries
        self._ids = {w: i for i, w in enumerate(entries)}
        assert len(self._ids) == len(entries), "vocabulary entries must be unique"

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    @property
    def wsep_id(self) -> int:
        return self._ids[WSEP]

    @property
    def cls_id(self) -> int:
        return self._ids[CLS]

    def word_id(self, word: str) -> int:
        """Whole-word id for the text encoder; unknowns keep their category."""
        wid = self._ids.get(word)
        if wid is not None:
            return wid
        return self._ids[UNK_NUM] if is_number_word(word) else self._ids[UNK_WORD]

    def char_id(self, ch: str) -> int:
        wid = self._ids.get(f"#{ch}")
        return wid if wid is not None else self._ids[UNK_WORD]

    def generator_pieces(self, word: str) -> list[int]:
        """Generator-side ids: vocabulary words stay whole, numbers become
        digit tokens, anything else becomes character tokens."""
        if is_number_word(word):
            return [self.char_id(c) for c in word]
        wid = self._ids.get(word)
        if wid is not None:
            return [wid]
        return [self.char_id(c) for c in word.lower()]

    def decode_piece(self, idx: int) -> str:
        entry = self._entries[idx]
        if entry.startswith("#") and len(entry) == 2:
            return entry[1]
        return entry

    def is_char_piece(self, idx: int) -> bool:
        return idx >= self._char_offset

    def detokenize(self, ids) -> str:
        """Join generator output ids into an answer string.

        Character/digit pieces concatenate; word pieces and <wsep> introduce
        spaces; specials terminate or vanish."""
        parts: list[str] = []
        gluing = False
        for idx in ids:
            idx = int(idx)
            entry = self._entries[idx]
            if entry == EOS:
                break
            if entry in (PAD, BOS, SEP, CLS):
                continue
            if entry == WSEP:
                gluing = False
                continue
            if self.is_char_piece(idx):
                if gluing and parts:
                    parts[-1] += entry[1]
                else:
                    parts.append(entry[1])
                gluing = True
            else:
                if entry in (UNK_WORD, UNK_NUM):
                    entry = ""
                parts.append(entry)
                gluing = False
        return " ".join(p for p in parts if p)


_DEFAULT: Vocabulary | None = None


def default_vocab() -> Vocabulary:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Vocabulary()
    return _DEFAULT
