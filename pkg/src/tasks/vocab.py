"""Token vocabulary shared by every synthetic task."""

BOS = 0
TAG_ADD = 1
TAG_REVERSE = 2
TAG_PARITY = 3
PLUS = 4
EQUALS = 5
DIGIT_BASE = 6  # '0'..'9' -> 6..15
LETTER_BASE = 16  # 'a'..'h' -> 16..23
ODD = 24
EVEN = 25

NUM_DIGITS = 10
NUM_LETTERS = 8
MIN_VOCAB_SIZE = 26

_SYMBOLS = {BOS: "<bos>", TAG_ADD: "<add>", TAG_REVERSE: "<rev>", TAG_PARITY: "<par>",
            PLUS: "+", EQUALS: "=", ODD: "odd", EVEN: "even"}


def digit(value: int) -> int:
    if not 0 <= value < NUM_DIGITS:
        raise ValueError(f"No digit token for {value}")
    return DIGIT_BASE + value


def letter(index: int) -> int:
    if not 0 <= index < NUM_LETTERS:
        raise ValueError(f"No letter token for index {index}")
    return LETTER_BASE + index


def encode_text(text: str) -> list[int]:
    """Encode digits and letters a-h, e.g. ``"3+5="`` -> digit, plus, digit, equals."""
    tokens = []
    for char in text:
        if char.isdigit():
            tokens.append(digit(int(char)))
        elif "a" <= char <= "h":
            tokens.append(letter(ord(char) - ord("a")))
        elif char == "+":
            tokens.append(PLUS)
        elif char == "=":
            tokens.append(EQUALS)
        else:
            raise ValueError(f"Character {char!r} has no token")
    return tokens


def decode(tokens: list[int]) -> str:
    parts = []
    for token in tokens:
        if DIGIT_BASE <= token < DIGIT_BASE + NUM_DIGITS:
            parts.append(str(token - DIGIT_BASE))
        elif LETTER_BASE <= token < LETTER_BASE + NUM_LETTERS:
            parts.append(chr(ord("a") + token - LETTER_BASE))
        else:
            parts.append(_SYMBOLS.get(token, f"<{token}>"))
    return "".join(parts) if all(len(p) == 1 for p in parts) else " ".join(parts)
