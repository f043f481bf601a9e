"""MiniC: the small imperative language analysed by faultforge.

The module holds the abstract syntax, a recursive-descent parser, a static
checker, a canonical pretty-printer, injection-point enumeration and the
countermeasure rewrites (test duplication, load duplication, block
signature).

All nodes are frozen dataclasses.  Rewrites return new programs; nothing is
mutated in place.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

# Line labels are tuples: (5,) is source line 5, (5, 1) the first synthetic
# line inserted after it, rendered "5.1".
Line = tuple

BUILTIN_CONSTANTS = {"BOOL_TRUE": 0xAA, "BOOL_FALSE": 0x55}

TYPES = ("int", "bool", "byte[]")

CONDITIONAL_TEST = "conditional-test"
MARKED_LOAD = "marked-load"
THEN_ELSE_JOIN = "then-else-join"

KIND_MODEL = {CONDITIONAL_TEST: "ti", MARKED_LOAD: "dlm", THEN_ELSE_JOIN: "eft"}
_KIND_RANK = {CONDITIONAL_TEST: 0, MARKED_LOAD: 1, THEN_ELSE_JOIN: 2}

SCHEME_KINDS = {
    "test_dup": (CONDITIONAL_TEST,),
    "load_dup": (MARKED_LOAD,),
    "block_sig": (CONDITIONAL_TEST, THEN_ELSE_JOIN),
}


def render_line(line: Line) -> str:
    return ".".join(str(x) for x in line)


def parse_line(text: str) -> Line:
    return tuple(int(x) for x in text.split("."))


class MiniCError(ValueError):
    pass


class MiniCSyntaxError(MiniCError):
    def __init__(self, message: str, line: int, col: int, offset: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.offset = offset


class MiniCSemanticError(MiniCError):
    def __init__(self, message: str, line: Line = ()):
        prefix = f"{render_line(line)}: " if line else ""
        super().__init__(prefix + message)
        self.line = line


class InapplicableScheme(MiniCError):
    pass


# ---------------------------------------------------------------------------
# Abstract syntax


@dataclass(frozen=True)
class Const:
    value: Union[int, bool]


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Index:
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class Load:
    """A load eligible for data-load modification faults."""

    arg: "Expr"
    line: Line
    col: int


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Name, Index, Load, Unary, Binary]


@dataclass(frozen=True)
class Let:
    name: str
    value: Expr
    line: Line
    col: int = 0
    cm: Optional[str] = None


@dataclass(frozen=True)
class Assign:
    target: Union[Name, Index]
    value: Expr
    line: Line
    col: int = 0
    cm: Optional[str] = None


@dataclass(frozen=True)
class If:
    cond: Expr
    body: tuple
    orelse: Optional[tuple]
    line: Line
    col: int = 0
    else_line: Optional[Line] = None
    # Guards are test-duplication checks sitting on the branch edge: a then
    # block falling through into the else block skips the leading guards.
    guard: bool = False
    cm: Optional[str] = None


@dataclass(frozen=True)
class While:
    cond: Expr
    body: tuple
    line: Line
    col: int = 0
    cm: Optional[str] = None


@dataclass(frozen=True)
class Return:
    value: Expr
    line: Line
    col: int = 0
    cm: Optional[str] = None


@dataclass(frozen=True)
class Detect:
    line: Line
    col: int = 0
    cm: Optional[str] = None


Stmt = Union[Let, Assign, If, While, Return, Detect]


@dataclass(frozen=True)
class Param:
    name: str
    type: str


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple
    ret: str
    body: tuple
    line: Line = (0,)


@dataclass(frozen=True)
class Program:
    functions: tuple = ()
    entry: Optional[str] = None

    @property
    def entry_function(self) -> FunctionDef:
        for fn in self.functions:
            if fn.name == self.entry:
                return fn
        raise MiniCSemanticError("program has no entry function")

    @property
    def source_map(self) -> dict:
        """Rendered line label -> kinds of the statements on that line."""
        out: dict = {}
        for fn in self.functions:
            for stmt in walk_statements(fn.body):
                out.setdefault(render_line(stmt.line), []).append(type(stmt).__name__.lower())
        return out

    def with_entry(self, name: str) -> "Program":
        if name not in {fn.name for fn in self.functions}:
            raise MiniCSemanticError(f"unknown entry function {name!r}")
        return dataclasses.replace(self, entry=name)


@dataclass(frozen=True, order=True)
class InjectionPoint:
    sort_key: tuple = field(repr=False)
    id: str = field(compare=False)
    kind: str = field(compare=False)
    line: Line = field(compare=False)
    col: int = field(compare=False)
    # (kind, line, col) of the node carrying the site; used by the interpreter.
    site: tuple = field(compare=False, repr=False)
    # True for the condition of a while loop.
    loop: bool = field(default=False, compare=False)

    @property
    def model(self) -> str:
        return KIND_MODEL[self.kind]

    @property
    def applicable_models(self) -> frozenset:
        return frozenset({self.model})


# ---------------------------------------------------------------------------
# Lexer

_KEYWORDS = {
    "fn", "let", "if", "else", "while", "for", "return", "detect", "load",
    "true", "false", "int", "bool", "byte",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<num>0[xX][0-9a-fA-F]+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|==|!=|<=|>=|&&|\|\||[-+*<>=!(){}\[\];,:])
  """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "ident", "kw", "op", "eof"
    text: str
    line: int
    col: int
    offset: int


def tokenize(text: str) -> list:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise MiniCSyntaxError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1, pos
            )
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("num", "ident", "op"):
            if kind == "ident" and tok in _KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, tok, line, pos - line_start + 1, pos))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1, pos))
    return tokens


# ---------------------------------------------------------------------------
# Parser

_BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("+", "-"),
    ("*",),
]


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, expected: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise MiniCSyntaxError(f"expected {expected}, found {found}", t.line, t.col, t.offset)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def eat(self, text: str) -> Token:
        if not self.at(text):
            self.error(repr(text))
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            self.error("identifier")
        t = self.tok
        self.i += 1
        return t

    def program(self) -> list:
        fns = []
        while self.tok.kind != "eof":
            fns.append(self.function())
        return fns

    def function(self) -> FunctionDef:
        start = self.eat("fn")
        name = self.ident().text
        self.eat("(")
        params = []
        while not self.at(")"):
            if params:
                self.eat(",")
            pname = self.ident().text
            self.eat(":")
            params.append(Param(pname, self.type()))
        self.eat(")")
        self.eat("->")
        ret = self.type()
        body = self.block()
        return FunctionDef(name, tuple(params), ret, tuple(body), (start.line,))

    def type(self) -> str:
        if self.at("int") or self.at("bool"):
            return self.eat(self.tok.text).text
        if self.at("byte"):
            self.eat("byte")
            self.eat("[")
            self.eat("]")
            return "byte[]"
        self.error("type")

    def block(self) -> list:
        self.eat("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.error("'}'")
            stmts.extend(self.statement())
        self.eat("}")
        return stmts

    def statement(self) -> list:
        t = self.tok
        line, col = (t.line,), t.col
        if self.at("let"):
            stmt = self.simple()
            self.eat(";")
            return [stmt]
        if self.at("if"):
            self.eat("if")
            self.eat("(")
            cond = self.expr()
            self.eat(")")
            body = self.block()
            orelse, else_line = None, None
            if self.at("else"):
                else_line = (self.eat("else").line,)
                orelse = tuple(self.block())
            return [If(cond, tuple(body), orelse, line, col, else_line)]
        if self.at("while"):
            self.eat("while")
            self.eat("(")
            cond = self.expr()
            self.eat(")")
            return [While(cond, tuple(self.block()), line, col)]
        if self.at("for"):
            self.eat("for")
            self.eat("(")
            init = self.simple(line)
            self.eat(";")
            cond = self.expr()
            self.eat(";")
            step = self.simple(line)
            self.eat(")")
            body = self.block()
            # The loop condition keeps the `for` line so it is reported as IP<line>.
            return [init, While(cond, tuple(body) + (step,), line, col)]
        if self.at("return"):
            self.eat("return")
            value = self.expr()
            self.eat(";")
            return [Return(value, line, col)]
        if self.at("detect"):
            self.eat("detect")
            self.eat("(")
            self.eat(")")
            self.eat(";")
            return [Detect(line, col)]
        if t.kind == "ident":
            stmt = self.simple()
            self.eat(";")
            return [stmt]
        self.error("statement")

    def simple(self, line: Optional[Line] = None):
        t = self.tok
        line = line or (t.line,)
        if self.at("let"):
            self.eat("let")
            name = self.ident().text
            self.eat("=")
            return Let(name, self.expr(), line, t.col)
        target: Union[Name, Index] = Name(self.ident().text)
        if self.at("["):
            self.eat("[")
            target = Index(target, self.expr())
            self.eat("]")
        self.eat("=")
        return Assign(target, self.expr(), line, t.col)

    def expr(self, level: int = 0) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        while self.tok.kind == "op" and self.tok.text in _BINARY_LEVELS[level]:
            op = self.eat(self.tok.text).text
            left = Binary(op, left, self.expr(level + 1))
        return left

    def unary(self) -> Expr:
        if self.at("!"):
            self.eat("!")
            return Unary("!", self.unary())
        if self.at("-"):
            self.eat("-")
            operand = self.unary()
            if isinstance(operand, Const) and not isinstance(operand.value, bool):
                return Const(-operand.value)
            return Unary("-", operand)
        return self.postfix()

    def postfix(self) -> Expr:
        e = self.primary()
        while self.at("["):
            self.eat("[")
            e = Index(e, self.expr())
            self.eat("]")
        return e

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Const(int(t.text, 0))
        if self.at("true") or self.at("false"):
            self.i += 1
            return Const(t.text == "true")
        if self.at("load"):
            self.eat("load")
            self.eat("(")
            arg = self.expr()
            self.eat(")")
            return Load(arg, (t.line,), t.col)
        if t.kind == "ident":
            self.i += 1
            return Name(t.text)
        if self.at("("):
            self.eat("(")
            e = self.expr()
            self.eat(")")
            return e
        self.error("expression")


def parse_expression(text: str) -> Expr:
    p = _Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        p.error("end of expression")
    return e


def parse_program(text: str, entry: Optional[str] = None) -> Program:
    """Parse and check MiniC source.

    The entry point defaults to the first function of the file.
    """
    fns = _Parser(text).program()
    names = [fn.name for fn in fns]
    for n in names:
        if names.count(n) > 1:
            raise MiniCSemanticError(f"duplicate function {n!r}")
    if entry is None and fns:
        entry = fns[0].name
    elif entry is not None and entry not in names:
        raise MiniCSemanticError(f"unknown entry function {entry!r}")
    prog = Program(tuple(fns), entry)
    check_program(prog)
    return prog


# ---------------------------------------------------------------------------
# Static checks


class _Scope:
    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.vars: dict = {}

    def lookup(self, name: str) -> Optional[str]:
        s: Optional[_Scope] = self
        while s is not None:
            if name in s.vars:
                return s.vars[name]
            s = s.parent
        return None


def expr_type(e: Expr, lookup: Callable[[str], Optional[str]], line: Line = ()) -> str:
    if isinstance(e, Const):
        return "bool" if isinstance(e.value, bool) else "int"
    if isinstance(e, Name):
        t = lookup(e.id)
        if t is None:
            if e.id in BUILTIN_CONSTANTS:
                return "int"
            raise MiniCSemanticError(f"unresolved identifier {e.id!r}", line)
        return t
    if isinstance(e, Index):
        if expr_type(e.base, lookup, line) != "byte[]":
            raise MiniCSemanticError("indexing a non-array value", line)
        if expr_type(e.index, lookup, line) != "int":
            raise MiniCSemanticError("array index must be int", line)
        return "int"
    if isinstance(e, Load):
        t = expr_type(e.arg, lookup, line)
        if t not in ("int", "bool"):
            raise MiniCSemanticError("load() expects an int or bool value", line)
        return t
    if isinstance(e, Unary):
        t = expr_type(e.operand, lookup, line)
        want = "bool" if e.op == "!" else "int"
        if t != want:
            raise MiniCSemanticError(f"operator {e.op} expects {want}, got {t}", line)
        return want
    if isinstance(e, Binary):
        lt = expr_type(e.left, lookup, line)
        rt = expr_type(e.right, lookup, line)
        if e.op in ("+", "-", "*", "<", "<=", ">", ">="):
            if lt != "int" or rt != "int":
                raise MiniCSemanticError(f"operator {e.op} expects int operands", line)
            return "int" if e.op in "+-*" else "bool"
        if e.op in ("&&", "||"):
            if lt != "bool" or rt != "bool":
                raise MiniCSemanticError(f"operator {e.op} expects bool operands", line)
            return "bool"
        if lt != rt or lt == "byte[]":
            raise MiniCSemanticError(f"cannot compare {lt} with {rt}", line)
        return "bool"
    raise TypeError(e)


def _check_block(stmts: Sequence[Stmt], scope: _Scope, ret: str) -> None:
    for s in stmts:
        if isinstance(s, Let):
            t = expr_type(s.value, scope.lookup, s.line)
            if scope.lookup(s.name) is not None or s.name in BUILTIN_CONSTANTS:
                raise MiniCSemanticError(f"redefinition of {s.name!r}", s.line)
            scope.vars[s.name] = t
        elif isinstance(s, Assign):
            vt = expr_type(s.value, scope.lookup, s.line)
            tt = expr_type(s.target, scope.lookup, s.line)
            if isinstance(s.target, Name) and s.target.id in BUILTIN_CONSTANTS:
                raise MiniCSemanticError(f"cannot assign constant {s.target.id}", s.line)
            if vt != tt:
                raise MiniCSemanticError(f"type mismatch: {tt} = {vt}", s.line)
        elif isinstance(s, If):
            if expr_type(s.cond, scope.lookup, s.line) != "bool":
                raise MiniCSemanticError("condition must be bool", s.line)
            _check_block(s.body, _Scope(scope), ret)
            if s.orelse is not None:
                _check_block(s.orelse, _Scope(scope), ret)
        elif isinstance(s, While):
            if expr_type(s.cond, scope.lookup, s.line) != "bool":
                raise MiniCSemanticError("condition must be bool", s.line)
            _check_block(s.body, _Scope(scope), ret)
        elif isinstance(s, Return):
            t = expr_type(s.value, scope.lookup, s.line)
            if t != ret:
                raise MiniCSemanticError(f"returning {t} from a function returning {ret}", s.line)


def check_program(p: Program) -> None:
    for fn in p.functions:
        scope = _Scope()
        for prm in fn.params:
            if prm.name in scope.vars:
                raise MiniCSemanticError(f"duplicate parameter {prm.name!r}", fn.line)
            scope.vars[prm.name] = prm.type
        _check_block(fn.body, _Scope(scope), fn.ret)


def param_types(p: Program) -> dict:
    return {prm.name: prm.type for prm in p.entry_function.params}


# ---------------------------------------------------------------------------
# Traversal helpers


def walk_statements(stmts: Iterable[Stmt]) -> Iterator[Stmt]:
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from walk_statements(s.body)
            if s.orelse is not None:
                yield from walk_statements(s.orelse)
        elif isinstance(s, While):
            yield from walk_statements(s.body)


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Index):
        yield from walk_expr(e.base)
        yield from walk_expr(e.index)
    elif isinstance(e, Load):
        yield from walk_expr(e.arg)
    elif isinstance(e, Unary):
        yield from walk_expr(e.operand)
    elif isinstance(e, Binary):
        yield from walk_expr(e.left)
        yield from walk_expr(e.right)


def statement_exprs(s: Stmt) -> list:
    if isinstance(s, (Let, Return)):
        return [s.value]
    if isinstance(s, Assign):
        return [s.target, s.value]
    if isinstance(s, (If, While)):
        return [s.cond]
    return []


def map_expr(e: Expr, fn: Callable[[Expr], Optional[Expr]]) -> Expr:
    """Bottom-up rebuild; ``fn`` returns a replacement or None to keep."""
    r = fn(e)
    if r is not None:
        return r
    if isinstance(e, Index):
        return Index(map_expr(e.base, fn), map_expr(e.index, fn))
    if isinstance(e, Load):
        return dataclasses.replace(e, arg=map_expr(e.arg, fn))
    if isinstance(e, Unary):
        return Unary(e.op, map_expr(e.operand, fn))
    if isinstance(e, Binary):
        return Binary(e.op, map_expr(e.left, fn), map_expr(e.right, fn))
    return e


# ---------------------------------------------------------------------------
# Injection points


def _raw_sites(p: Program) -> list:
    """(display line, kind, col, site key) for every site in the program."""
    sites = []
    for fn in p.functions:
        for s in walk_statements(fn.body):
            if isinstance(s, (If, While)):
                sites.append((s.line, CONDITIONAL_TEST, s.col, (CONDITIONAL_TEST, s.line, s.col),
                              isinstance(s, While)))
            for e in statement_exprs(s):
                for sub in walk_expr(e):
                    if isinstance(sub, Load):
                        sites.append((sub.line, MARKED_LOAD, sub.col, (MARKED_LOAD, sub.line, sub.col), False))
            if isinstance(s, If) and s.orelse:
                sites.append((s.else_line or s.line, THEN_ELSE_JOIN, s.col,
                              (THEN_ELSE_JOIN, s.line, s.col), False))
    return sites


def all_injection_points(p: Program) -> list:
    """Every site of the program regardless of fault model, with stable ids.

    Ids are ``IP<line>``; a second site on the same line gets a letter
    suffix (``IP8b``), ordered conditional-test < marked-load < then-else-join.
    """
    raw = sorted(_raw_sites(p), key=lambda r: (r[0], _KIND_RANK[r[1]], r[2]))
    seen: dict = {}
    out = []
    for line, kind, col, key, loop in raw:
        n = seen.get(line, 0)
        seen[line] = n + 1
        suffix = "" if n == 0 else chr(ord("a") + n)
        ip_id = f"IP{render_line(line)}{suffix}"
        out.append(InjectionPoint((line, _KIND_RANK[kind], col), ip_id, kind, line, col, key, loop))
    return out


def enumerate_injection_points(p: Program, models: Iterable[str]) -> list:
    models = {m.lower() for m in models}
    return [ip for ip in all_injection_points(p) if ip.model in models]


def find_ip(p: Program, ip_id: str) -> InjectionPoint:
    for ip in all_injection_points(p):
        if ip.id == ip_id:
            return ip
    raise KeyError(ip_id)


def ip_sort_key(ip_id: str) -> tuple:
    """Order ip ids by line then suffix, e.g. IP4 < IP4b < IP4.1 < IP10."""
    m = re.fullmatch(r"IP([\d.]+)([a-z]?)", ip_id)
    if m is None:
        return ((), ip_id)
    return (parse_line(m.group(1)), m.group(2))


# ---------------------------------------------------------------------------
# Pretty printer

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6}


def format_expr(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Const):
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Index):
        return f"{format_expr(e.base, 8)}[{format_expr(e.index)}]"
    if isinstance(e, Load):
        return f"load({format_expr(e.arg)})"
    if isinstance(e, Unary):
        return f"{e.op}{format_expr(e.operand, 7)}"
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        text = f"{format_expr(e.left, prec)} {e.op} {format_expr(e.right, prec + 1)}"
        return f"({text})" if prec < parent else text
    raise TypeError(e)


def _format_block(stmts: Sequence[Stmt], indent: int, out: list) -> None:
    pad = "    " * indent
    for s in stmts:
        if isinstance(s, Let):
            out.append(f"{pad}let {s.name} = {format_expr(s.value)};")
        elif isinstance(s, Assign):
            out.append(f"{pad}{format_expr(s.target)} = {format_expr(s.value)};")
        elif isinstance(s, Return):
            out.append(f"{pad}return {format_expr(s.value)};")
        elif isinstance(s, Detect):
            out.append(f"{pad}detect();")
        elif isinstance(s, While):
            out.append(f"{pad}while ({format_expr(s.cond)}) {{")
            _format_block(s.body, indent + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(s, If):
            out.append(f"{pad}if ({format_expr(s.cond)}) {{")
            _format_block(s.body, indent + 1, out)
            if s.orelse is not None:
                out.append(f"{pad}}} else {{")
                _format_block(s.orelse, indent + 1, out)
            out.append(f"{pad}}}")


def format_program(p: Program) -> str:
    out: list = []
    for fn in p.functions:
        params = ", ".join(f"{prm.name}: {prm.type}" for prm in fn.params)
        out.append(f"fn {fn.name}({params}) -> {fn.ret} {{")
        _format_block(fn.body, 1, out)
        out.append("}")
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Countermeasure rewrites


def count_countermeasures(p: Program) -> int:
    """Number of countermeasure instances (one per inserted copy)."""
    tags = set()
    for fn in p.functions:
        for s in walk_statements(fn.body):
            if s.cm is not None:
                tags.add(s.cm)
    return len(tags)


def countermeasure_instances(p: Program) -> dict:
    counts: dict = {}
    tags = set()
    for fn in p.functions:
        for s in walk_statements(fn.body):
            if s.cm is not None:
                tags.add(s.cm)
    for t in tags:
        scheme = t.split("#")[0]
        counts[scheme] = counts.get(scheme, 0) + 1
    return counts


class _Fresh:
    """Allocates synthetic lines, variable names and instance tags."""

    def __init__(self, p: Program):
        self.lines = set()
        self.names = set(BUILTIN_CONSTANTS)
        self.tags = 0
        for fn in p.functions:
            self.names.update(prm.name for prm in fn.params)
            for s in walk_statements(fn.body):
                self.lines.add(s.line)
                if isinstance(s, If) and s.else_line:
                    self.lines.add(s.else_line)
                if isinstance(s, Let):
                    self.names.add(s.name)
                if s.cm is not None:
                    self.tags = max(self.tags, int(s.cm.split("#")[1]))
                for e in statement_exprs(s):
                    for sub in walk_expr(e):
                        if isinstance(sub, Load):
                            self.lines.add(sub.line)

    def line(self, base: Line) -> Line:
        k = 1
        while base + (k,) in self.lines:
            k += 1
        new = base + (k,)
        self.lines.add(new)
        return new

    def name(self, stem: str) -> str:
        k = 1
        while f"{stem}{k}" in self.names:
            k += 1
        self.names.add(f"{stem}{k}")
        return f"{stem}{k}"

    def tag(self, scheme: str) -> str:
        self.tags += 1
        return f"{scheme}#{self.tags}"


def _relabel_loads(e: Expr, line: Line) -> Expr:
    return map_expr(e, lambda x: dataclasses.replace(x, arg=_relabel_loads(x.arg, line), line=line)
                    if isinstance(x, Load) else None)


def _negate(e: Expr) -> Expr:
    return Unary("!", e)


def _detect(line: Line, tag: str) -> tuple:
    return (Detect(line, 0, tag),)


def _rewrite_blocks(stmts: tuple, fn: Callable[[Stmt], Optional[list]]) -> tuple:
    """Replace statements for which ``fn`` returns a list; recurse otherwise."""
    out = []
    for s in stmts:
        r = fn(s)
        if r is not None:
            out.extend(r)
            continue
        if isinstance(s, If):
            s = dataclasses.replace(
                s,
                body=_rewrite_blocks(s.body, fn),
                orelse=None if s.orelse is None else _rewrite_blocks(s.orelse, fn),
            )
        elif isinstance(s, While):
            s = dataclasses.replace(s, body=_rewrite_blocks(s.body, fn))
        out.append(s)
    return tuple(out)


def _map_functions(p: Program, fn: Callable[[Stmt], Optional[list]]) -> Program:
    fns = tuple(dataclasses.replace(f, body=_rewrite_blocks(f.body, fn)) for f in p.functions)
    return dataclasses.replace(p, functions=fns)


def _test_dup(s: Stmt, copies: int, fresh: _Fresh) -> list:
    if isinstance(s, If):
        then_guards, else_guards = [], []
        for _ in range(copies):
            tag = fresh.tag("test_dup")
            lt, le = fresh.line(s.line), fresh.line(s.line)
            then_guards.append(If(_negate(_relabel_loads(s.cond, lt)), _detect(lt, tag), None,
                                  lt, 0, guard=True, cm=tag))
            else_guards.append(If(_relabel_loads(s.cond, le), _detect(le, tag), None,
                                  le, 0, guard=True, cm=tag))
        else_line = s.else_line if s.orelse is not None else fresh.line(s.line)
        return [dataclasses.replace(
            s,
            body=tuple(then_guards) + s.body,
            orelse=tuple(else_guards) + (s.orelse or ()),
            else_line=else_line,
        )]
    if isinstance(s, While):
        inner, post = [], []
        for _ in range(copies):
            tag = fresh.tag("test_dup")
            lt, lp = fresh.line(s.line), fresh.line(s.line)
            inner.append(If(_negate(_relabel_loads(s.cond, lt)), _detect(lt, tag), None,
                            lt, 0, guard=True, cm=tag))
            # Loop exit check: the condition must be false once the loop is left.
            post.append(If(_relabel_loads(s.cond, lp), _detect(lp, tag), None, lp, 0, cm=tag))
        return [dataclasses.replace(s, body=tuple(inner) + s.body)] + post
    raise InapplicableScheme("test_dup applies to if/while conditions")


def _block_sig(s: Stmt, copies: int, fresh: _Fresh) -> list:
    if not isinstance(s, If):
        raise InapplicableScheme("block_sig applies to if statements")
    rts = fresh.name("__rts")
    first = fresh.tag("block_sig")
    n = int(first.split("#")[1])
    id_true, id_false = 2 * n + 1, 2 * n + 2
    l0, l1 = fresh.line(s.line), fresh.line(s.line)
    sign = [
        Let(rts, Const(0), l0, 0, first),
        If(_relabel_loads(s.cond, l1), (Assign(Name(rts), Const(id_true), l1, 0, first),),
           (Assign(Name(rts), Const(id_false), l1, 0, first),), l1, 0, l1, cm=first),
    ]
    then_checks, else_checks = [], []
    for k in range(copies):
        tag = first if k == 0 else fresh.tag("block_sig")
        lt, le = fresh.line(s.line), fresh.line(s.line)
        then_checks.append(If(Binary("!=", Load(Name(rts), lt, 1), Const(id_true)),
                              _detect(lt, tag), None, lt, 0, cm=tag))
        else_checks.append(If(Binary("!=", Load(Name(rts), le, 1), Const(id_false)),
                              _detect(le, tag), None, le, 0, cm=tag))
    else_line = s.else_line if s.orelse is not None else fresh.line(s.line)
    new_if = dataclasses.replace(
        s,
        body=_after_guards(s.body, then_checks),
        orelse=_after_guards(s.orelse or (), else_checks),
        else_line=else_line,
    )
    return sign + [new_if]


def _after_guards(block: tuple, checks: list) -> tuple:
    n = 0
    while n < len(block) and isinstance(block[n], If) and block[n].guard:
        n += 1
    return block[:n] + tuple(checks) + block[n:]


def _load_dup(s: Stmt, target: Load, copies: int, fresh: _Fresh) -> list:
    if isinstance(s, While):
        raise InapplicableScheme("load_dup cannot hoist a load out of a loop condition")
    var = fresh.name("__ld")
    pre: list = [Let(var, target, s.line, s.col, None)]
    tags = []
    for _ in range(copies):
        tag = fresh.tag("load_dup")
        tags.append(tag)
        ll, lc = fresh.line(target.line), fresh.line(target.line)
        dup = fresh.name("__ldc")
        pre.append(Let(dup, dataclasses.replace(_relabel_loads(target, ll), line=ll), ll, 0, tag))
        pre.append(If(Binary("!=", Name(var), Name(dup)), _detect(lc, tag), None, lc, 0, cm=tag))
    replaced = _replace_load(s, target, Name(var))
    return pre + [replaced]


def _replace_load(s: Stmt, target: Load, new: Expr) -> Stmt:
    def swap(e: Expr) -> Optional[Expr]:
        if isinstance(e, Load) and e.line == target.line and e.col == target.col:
            return new
        return None

    if isinstance(s, (Let, Return)):
        return dataclasses.replace(s, value=map_expr(s.value, swap))
    if isinstance(s, Assign):
        return dataclasses.replace(s, target=map_expr(s.target, swap), value=map_expr(s.value, swap))
    if isinstance(s, If):
        return dataclasses.replace(s, cond=map_expr(s.cond, swap))
    raise InapplicableScheme(f"cannot rewrite load in {type(s).__name__}")


def _statement_has_site(s: Stmt, site: tuple) -> bool:
    kind, line, col = site
    if kind in (CONDITIONAL_TEST, THEN_ELSE_JOIN):
        return isinstance(s, (If, While)) and s.line == line and s.col == col and (
            kind == CONDITIONAL_TEST or isinstance(s, If))
    for e in statement_exprs(s):
        for sub in walk_expr(e):
            if isinstance(sub, Load) and sub.line == line and sub.col == col:
                return True
    return False


def _find_load(s: Stmt, site: tuple) -> Load:
    for e in statement_exprs(s):
        for sub in walk_expr(e):
            if isinstance(sub, Load) and (MARKED_LOAD, sub.line, sub.col) == site:
                return sub
    raise KeyError(site)


def apply_scheme(p: Program, ip: Union[InjectionPoint, str], scheme: str, copies: int = 1) -> Program:
    """Protect ``ip`` with ``copies`` independent instances of ``scheme``."""
    if isinstance(ip, str):
        ip = find_ip(p, ip)
    if scheme not in SCHEME_KINDS:
        raise InapplicableScheme(f"unknown countermeasure scheme {scheme!r}")
    if ip.kind not in SCHEME_KINDS[scheme]:
        raise InapplicableScheme(f"{scheme} does not apply to {ip.kind} sites")
    if copies < 1:
        raise ValueError("copies must be >= 1")
    fresh = _Fresh(p)
    hits = []

    def rewrite(s: Stmt) -> Optional[list]:
        if hits or not _statement_has_site(s, ip.site):
            return None
        # Loads nested in a compound statement's body are handled by recursion.
        if ip.kind == MARKED_LOAD and isinstance(s, (If, While)) and not any(
                isinstance(x, Load) and (MARKED_LOAD, x.line, x.col) == ip.site
                for x in walk_expr(s.cond)):
            return None
        hits.append(s)
        if scheme == "test_dup":
            return _test_dup(s, copies, fresh)
        if scheme == "block_sig":
            return _block_sig(s, copies, fresh)
        return _load_dup(s, _find_load(s, ip.site), copies, fresh)

    out = _map_functions(p, rewrite)
    if not hits:
        raise InapplicableScheme(f"site of {ip.id} not found")
    check_program(out)
    return out
