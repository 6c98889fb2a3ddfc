from crypto_utils import sha256_hex


def clamp(x: int, lo: int, hi: int) -> int:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def average(xs: list[int]) -> float:
    """Mean of xs; 0.0 for an empty list."""
    if len(xs) == 0:
        return 0.0
    return sum(xs) / len(xs)


def normalize_name(name: str) -> str:
    return " ".join(name.strip().lower().split())


def format_user(name: str, uid: int) -> str:
    return normalize_name(name) + "#" + str(uid)


def fingerprint(text: str) -> str:
    return sha256_hex(text.encode())[:16]


def log_event(event, payload):
    print(event, payload)


def factorial(n: int) -> int:
    if n <= 1:
        return 1
    return n * factorial(n - 1)


def read_config(path: str) -> str:
    with open(path) as fh:
        return fh.read()


class Session:
    def __init__(self, user: str):
        self.user = user

    @staticmethod
    def checksum(data: bytes) -> int:
        total = 0
        for b in data:
            total = (total + b) % 65536
        return total

    def token_for(self, scope: str) -> str:
        return fingerprint(self.user + ":" + scope)
