"""Runtime shared by teeport drivers and generated enclave stubs.

Literal format (one value):
    int      -?[0-9]+
    float    decimal with '.' or exponent, nan, inf, -inf
    bool     true | false
    string   "..." with \\" \\\\ \\n \\r \\t \\uXXXX escapes
    bytes    x"<hex>"
    array    [v, v, ...]
"""

import ast
import hashlib
import json
import math
import os
import socket
import struct
import sys

# --------------------------------------------------------------------------
# literals


class LiteralError(ValueError):
    pass


class _Parser:
    def __init__(self, text):
        self.s = text
        self.i = 0

    def ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t\r\n":
            self.i += 1

    def at_end(self):
        self.ws()
        return self.i >= len(self.s)

    def expect(self, ch):
        self.ws()
        if self.i >= len(self.s) or self.s[self.i] != ch:
            raise LiteralError("expected %r at %d" % (ch, self.i))
        self.i += 1

    def value(self):
        self.ws()
        if self.i >= len(self.s):
            raise LiteralError("unexpected end of input")
        c = self.s[self.i]
        if c == '"':
            return self.string()
        if c == "x" and self.s.startswith('x"', self.i):
            self.i += 1
            return bytes.fromhex(self.string())
        if c == "[":
            self.i += 1
            items = []
            self.ws()
            if self.s.startswith("]", self.i):
                self.i += 1
                return items
            while True:
                items.append(self.value())
                self.ws()
                if self.s.startswith("]", self.i):
                    self.i += 1
                    return items
                self.expect(",")
        for word, val in (("true", True), ("false", False), ("nan", math.nan), ("inf", math.inf), ("-inf", -math.inf)):
            if self.s.startswith(word, self.i):
                self.i += len(word)
                return val
        start = self.i
        while self.i < len(self.s) and self.s[self.i] in "+-0123456789.eE":
            self.i += 1
        tok = self.s[start:self.i]
        if not tok:
            raise LiteralError("unexpected %r at %d" % (c, start))
        if any(ch in tok for ch in ".eE"):
            return float(tok)
        return int(tok)

    def string(self):
        self.expect('"')
        out = []
        while True:
            if self.i >= len(self.s):
                raise LiteralError("unterminated string")
            c = self.s[self.i]
            self.i += 1
            if c == '"':
                return "".join(out)
            if c == "\\":
                e = self.s[self.i]
                self.i += 1
                if e == "u":
                    out.append(chr(int(self.s[self.i:self.i + 4], 16)))
                    self.i += 4
                else:
                    out.append({"n": "\n", "r": "\r", "t": "\t", '"': '"', "\\": "\\"}[e])
            else:
                out.append(c)


def parse_case(line):
    line = line.strip()
    if line == "()":
        return []
    p = _Parser(line)
    out = [p.value()]
    while not p.at_end():
        p.expect(",")
        out.append(p.value())
    return out


def parse_value(text):
    p = _Parser(text)
    v = p.value()
    if not p.at_end():
        raise LiteralError("trailing input")
    return v


def _fmt_float(x):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def literal(v, ty):
    """Encode a value of declared semantic type `ty` as a literal."""
    if ty == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError("expected int, got %s" % type(v).__name__)
        return str(v)
    if ty == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TypeError("expected float, got %s" % type(v).__name__)
        return _fmt_float(float(v))
    if ty == "bool":
        if not isinstance(v, bool):
            raise TypeError("expected bool, got %s" % type(v).__name__)
        return "true" if v else "false"
    if ty == "string":
        if not isinstance(v, str):
            raise TypeError("expected str, got %s" % type(v).__name__)
        out = ['"']
        for ch in v:
            if ch == '"':
                out.append('\\"')
            elif ch == "\\":
                out.append("\\\\")
            elif ch == "\n":
                out.append("\\n")
            elif ch == "\r":
                out.append("\\r")
            elif ch == "\t":
                out.append("\\t")
            elif ord(ch) < 0x20 or ord(ch) == 0x7F:
                out.append("\\u%04x" % ord(ch))
            else:
                out.append(ch)
        out.append('"')
        return "".join(out)
    if ty == "bytes":
        if not isinstance(v, (bytes, bytearray)):
            raise TypeError("expected bytes, got %s" % type(v).__name__)
        return 'x"%s"' % bytes(v).hex()
    if ty.startswith("array<") and ty.endswith(">"):
        inner = ty[6:-1]
        if not isinstance(v, (list, tuple)):
            raise TypeError("expected list, got %s" % type(v).__name__)
        return "[" + ", ".join(literal(x, inner) for x in v) + "]"
    raise TypeError("unsupported semantic type %s" % ty)


def matches(v, ty):
    if ty == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if ty == "float":
        return isinstance(v, float)
    if ty == "bool":
        return isinstance(v, bool)
    if ty == "string":
        return isinstance(v, str)
    if ty == "bytes":
        return isinstance(v, bytes)
    if ty.startswith("array<"):
        return isinstance(v, list) and all(matches(x, ty[6:-1]) for x in v)
    return False


# --------------------------------------------------------------------------
# determinism shim

_stream = None


class _Stream:
    def __init__(self, spec):
        kind, _, arg = spec.partition(":")
        self.kind = kind
        self.spec = spec
        if kind == "bytes":
            self.fixed = bytes.fromhex(arg)
            if not self.fixed:
                raise ValueError("empty random byte stream")
        elif kind == "seed":
            self.state = int(arg) & 0xFFFFFFFFFFFFFFFF
            self.fixed = None
        else:
            raise ValueError("unknown random source %r" % spec)
        self.pos = 0
        self.buf = b""

    def _next_u64(self):
        # splitmix64
        self.state = (self.state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return z ^ (z >> 31)

    def take(self, n):
        out = bytearray()
        while len(out) < n:
            if self.fixed is not None:
                out.append(self.fixed[self.pos % len(self.fixed)])
                self.pos += 1
            else:
                if not self.buf:
                    self.buf = struct.pack("<Q", self._next_u64())
                out.append(self.buf[0])
                self.buf = self.buf[1:]
        return bytes(out)


def install_shim(spec):
    """Route the byte-level randomness APIs through a predefined stream."""
    global _stream
    if not spec:
        return
    _stream = _Stream(spec)
    import random
    import secrets

    def urandom(n):
        return _stream.take(n)

    os.urandom = urandom
    random._urandom = urandom
    secrets.token_bytes = lambda n=32: _stream.take(n)
    secrets.token_hex = lambda n=32: _stream.take(n).hex()
    random.randbytes = lambda n: _stream.take(n)


def shim_spec():
    return _stream.spec if _stream is not None else None


# --------------------------------------------------------------------------
# function lookup and coverage


def resolve(module, qualname):
    """Return (code-owning function, callable taking the declared args)."""
    import inspect

    parts = qualname.split(".")
    owner = module
    for p in parts[:-1]:
        owner = getattr(owner, p)
    name = parts[-1]
    if inspect.isclass(owner):
        raw = inspect.getattr_static(owner, name)
        if isinstance(raw, staticmethod):
            return raw.__func__, raw.__func__
        if isinstance(raw, classmethod):
            fn = raw.__func__
            return fn, lambda *a: fn(owner, *a)
        return raw, lambda *a: raw(None, *a)
    fn = getattr(owner, name)
    return fn, fn


def _function_node(tree, first_line, name):
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == name:
            start = node.decorator_list[0].lineno if node.decorator_list else node.lineno
            if first_line in (node.lineno, start):
                return node
    return None


def _own_statements(body):
    """Statements of this code object, excluding nested function/class bodies."""
    out = []
    stack = list(body)
    while stack:
        node = stack.pop()
        out.append(node)
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            continue
        for field in ("body", "orelse", "finalbody", "handlers"):
            for child in getattr(node, field, []) or []:
                if isinstance(child, ast.stmt):
                    stack.append(child)
                elif isinstance(child, ast.excepthandler):
                    stack.extend(child.body)
    return out


def analyze(fn):
    code = fn.__code__
    with open(code.co_filename, encoding="utf-8") as fh:
        tree = ast.parse(fh.read())
    node = _function_node(tree, code.co_firstlineno, code.co_name)
    if node is None:
        raise RuntimeError("cannot locate %s in %s" % (code.co_name, code.co_filename))
    body = list(node.body)
    if body and isinstance(body[0], ast.Expr) and isinstance(getattr(body[0], "value", None), ast.Constant) \
            and isinstance(body[0].value.value, str):
        body = body[1:]
    stmts = _own_statements(body)
    lines = sorted({s.lineno for s in stmts})
    branches = sorted(
        (s.lineno, s.body[0].lineno) for s in stmts if isinstance(s, (ast.If, ast.While, ast.For, ast.AsyncFor))
    )
    return lines, branches


class Tracer:
    def __init__(self, code):
        self.code = code
        self.lines = set()
        self.arcs = set()
        self._last = None

    def _local(self, frame, event, arg):
        if event == "line":
            self.lines.add(frame.f_lineno)
            if self._last is not None:
                self.arcs.add((self._last, frame.f_lineno))
            self._last = frame.f_lineno
        elif event == "return":
            if self._last is not None:
                self.arcs.add((self._last, -1))
            self._last = None
        return self._local

    def _global(self, frame, event, arg):
        if event == "call" and frame.f_code is self.code:
            self._last = None
            return self._local
        return None

    def run(self, call, args):
        sys.settrace(self._global)
        try:
            return call(*args)
        finally:
            sys.settrace(None)


# --------------------------------------------------------------------------
# enclave client

_used_nonces = set()


class AttestationError(RuntimeError):
    pass


class ChannelError(RuntimeError):
    pass


def _send(sock, kind, session, payload):
    body = json.dumps({"type": kind, "sessionId": session, "payload": payload}, sort_keys=True).encode()
    sock.sendall(struct.pack(">I", len(body)) + body)


def _recv_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelError("connection closed")
        buf += chunk
    return buf


def _recv(sock):
    (n,) = struct.unpack(">I", _recv_exact(sock, 4))
    if n > 16 * 1024 * 1024:
        raise ChannelError("frame too large")
    return json.loads(_recv_exact(sock, n))


def quote_message(measurement, nonce, binding, toolchain):
    return b"teeport-quote-v1" + measurement + nonce + binding + toolchain.encode()


def _nonce(counter):
    return b"\x00\x00\x00\x00" + struct.pack(">Q", counter)


def remote_call(endpoint, expected_measurement, attestation_pub, fqid, args_line):
    """attest -> verify -> bind channel -> CALL -> RESULT; returns the result literal."""
    from cryptography.exceptions import InvalidSignature
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
    from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
    from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
    from cryptography.hazmat.primitives.kdf.hkdf import HKDF

    host, port = endpoint.rsplit(":", 1)
    session = os.urandom(8).hex() if _stream is None else _real_urandom(8).hex()
    nonce = _real_urandom(32)
    with socket.create_connection((host, int(port)), timeout=30) as sock:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        _send(sock, "QUOTE_REQ", session, {"nonce": nonce.hex(), "fqid": fqid})
        msg = _recv(sock)
        if msg.get("type") != "QUOTE":
            raise AttestationError("expected QUOTE, got %s" % msg.get("type"))
        q = msg["payload"]
        measurement = bytes.fromhex(q["measurement"])
        binding = bytes.fromhex(q["channel_binding"])
        try:
            Ed25519PublicKey.from_public_bytes(bytes.fromhex(attestation_pub)).verify(
                bytes.fromhex(q["signature"]),
                quote_message(measurement, bytes.fromhex(q["nonce"]), binding, q["toolchain"]),
            )
        except InvalidSignature:
            raise AttestationError("BAD_SIGNATURE")
        if q["measurement"] != expected_measurement:
            raise AttestationError("MEASUREMENT_MISMATCH")
        if bytes.fromhex(q["nonce"]) in _used_nonces:
            raise AttestationError("NONCE_REPLAY")
        if bytes.fromhex(q["nonce"]) != nonce:
            raise AttestationError("NONCE_MISMATCH")
        _used_nonces.add(nonce)
        server_pub = bytes.fromhex(q["server_key"])
        if hashlib.sha256(server_pub).digest() != binding:
            raise AttestationError("CHANNEL_NOT_BOUND")

        secret = X25519PrivateKey.generate()
        client_pub = secret.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        shared = secret.exchange(X25519PublicKey.from_public_bytes(server_pub))
        okm = HKDF(
            algorithm=hashes.SHA256(),
            length=64,
            salt=hashlib.sha256(nonce + client_pub + server_pub).digest(),
            info=b"teeport-channel-v1",
        ).derive(shared)
        c2s, s2c = ChaCha20Poly1305(okm[:32]), ChaCha20Poly1305(okm[32:])
        _send(sock, "CHANNEL_INIT", session, {"client_key": client_pub.hex()})

        call = {"fqid": fqid, "args": args_line}
        if _stream is not None:
            call["random"] = _stream.spec
        aad = ("CALL|" + session).encode()
        ct = c2s.encrypt(_nonce(0), json.dumps(call, sort_keys=True).encode(), aad)
        _send(sock, "CALL", session, {"ciphertext": ct.hex()})
        reply = _recv(sock)
        kind = reply.get("type")
        if kind not in ("RESULT", "ERROR"):
            raise ChannelError("unexpected frame %s" % kind)
        p = reply["payload"]
        if "ciphertext" not in p:
            raise ChannelError("%s: %s" % (kind, p.get("code") or p.get("message")))
        aad = ("%s|%s" % (kind, session)).encode()
        try:
            plain = json.loads(s2c.decrypt(_nonce(0), bytes.fromhex(p["ciphertext"]), aad))
        except Exception:
            raise ChannelError("INTEGRITY_FAILURE")
        if kind == "ERROR" or not plain.get("ok"):
            raise RuntimeError("enclave error: %s" % plain.get("error") or plain.get("message"))
        return plain["output"]


_real_urandom = os.urandom


_links = {}


def _link_config(anchor=None, rel=None):
    if anchor is not None and rel is not None:
        path = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(anchor)), rel))
    else:
        path = os.environ.get("TEEPORT_LINK") or os.path.join(os.path.dirname(os.path.abspath(__file__)), "teeport_link.json")
    if path not in _links:
        with open(path) as f:
            _links[path] = json.load(f)
    return _links[path]


def enclave_call(fqid, args, param_types, ret, anchor=None, rel=None):
    """Body of a linked stub: forward the call to the attested native image."""
    cfg = _link_config(anchor, rel)
    line = ", ".join(literal(a, t) for a, t in zip(args, param_types)) or "()"
    target = cfg["images"][fqid]
    out = parse_value(remote_call(target["endpoint"], target["measurement"], cfg["attestation_public"], fqid, line))
    if ret == "float" and isinstance(out, int) and not isinstance(out, bool):
        out = float(out)
    return out
