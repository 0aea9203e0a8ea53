"""Lexer, parser and type checker for the Structured Text subset.

Grammar (keywords case-insensitive)::

    program   := [PROGRAM ident] {var_block} {stmt} [END_PROGRAM]
    var_block := VAR [CONSTANT] {decl} END_VAR
    decl      := ident {',' ident} [AT location] ':' (BOOL|INT) [':=' literal] ';'
    stmt      := ident ':=' expr ';'
               | IF expr THEN {stmt} {ELSIF expr THEN {stmt}} [ELSE {stmt}] END_IF ';'
    expr      := or ;  or := and {OR and} ;  and := eq {AND eq}
    eq        := rel {('=' | '<>') rel} ;  rel := add {('<'|'<='|'>'|'>=') add}
    add       := mul {('+'|'-') mul} ;  mul := unary {'*' unary}
    unary     := NOT unary | '-' unary | primary
    primary   := literal | ident | ABS '(' expr ')' | '(' expr ')'
    location  := %IX<byte>.<bit> | %QX<byte>.<bit> | %IW<n> | %QW<n>
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

INT_MIN, INT_MAX = -32768, 32767


class LogicError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.col = col


class LogicSyntaxError(LogicError):
    pass


class LogicTypeError(LogicError):
    pass


class DuplicateLocation(LogicError):
    pass


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class LocatedAddress:
    direction: str  # "I" or "Q"
    width: str  # "X" or "W"
    index: int  # flat bit index (byte*8+bit) or word index

    def __str__(self):
        if self.width == "X":
            return f"%{self.direction}X{self.index // 8}.{self.index % 8}"
        return f"%{self.direction}W{self.index}"

    @classmethod
    def parse(cls, text: str) -> "LocatedAddress":
        m = LOCATION_RE.fullmatch(text.upper())
        if not m:
            raise LogicSyntaxError(f"bad location {text!r}")
        direction, width, major, minor = m.groups()
        if width == "X":
            if minor is None or int(minor) > 7:
                raise LogicSyntaxError(f"bit location {text!r} needs .0-.7")
            return cls(direction, width, int(major) * 8 + int(minor))
        if minor is not None:
            raise LogicSyntaxError(f"word location {text!r} takes no bit suffix")
        return cls(direction, width, int(major))


@dataclass
class VarDecl:
    name: str
    type: str
    location: LocatedAddress | None
    initial: int
    constant: bool = False
    line: int = 0
    col: int = 0


@dataclass
class Expr:
    line: int
    col: int
    type: str = field(default="", init=False)


@dataclass
class Literal(Expr):
    value: int = 0
    literal_type: str = "INT"


@dataclass
class Name(Expr):
    name: str = ""


@dataclass
class Unary(Expr):
    op: str = ""
    operand: Expr = None


@dataclass
class Binary(Expr):
    op: str = ""
    left: Expr = None
    right: Expr = None


@dataclass
class Call(Expr):
    func: str = ""
    arg: Expr = None


@dataclass
class Assign:
    target: str
    expr: Expr
    line: int = 0
    col: int = 0


@dataclass
class If:
    branches: list  # [(cond, [stmt])]
    orelse: list
    line: int = 0
    col: int = 0


@dataclass
class LogicProgram:
    name: str
    declarations: list
    body: list

    def var(self, name: str) -> VarDecl:
        return self._by_name()[name.upper()]

    def _by_name(self) -> dict:
        return {d.name.upper(): d for d in self.declarations}

    @property
    def located(self) -> list:
        return [d for d in self.declarations if d.location is not None]


# -- lexer --------------------------------------------------------------------

KEYWORDS = {
    "PROGRAM", "END_PROGRAM", "VAR", "END_VAR", "CONSTANT", "AT", "IF", "THEN",
    "ELSIF", "ELSE", "END_IF", "AND", "OR", "NOT", "TRUE", "FALSE", "BOOL", "INT", "ABS",
}

LOCATION_RE = re.compile(r"%([IQ])([XW])(\d+)(?:\.(\d+))?")

TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\(\*.*?\*\)|//[^\n]*)
  | (?P<badcomment>\(\*)
  | (?P<loc>%[IiQq][XxWw]\d+(?:\.\d+)?)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|<>|<=|>=|[:;,()=<>+\-*])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass
class Token:
    kind: str  # kw, ident, int, loc, op, eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = TOKEN_RE.match(source, pos)
        if not m:
            raise LogicSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind, text = m.lastgroup, m.group()
        col = pos - line_start + 1
        if kind == "badcomment":
            raise LogicSyntaxError("unterminated comment", line, col)
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "comment":
            newlines = text.count("\n")
            if newlines:
                line += newlines
                line_start = pos + text.rindex("\n") + 1
        elif kind != "ws":
            if kind == "ident" and text.upper() in KEYWORDS:
                tokens.append(Token("kw", text.upper(), line, col))
            else:
                tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# -- parser -------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        shown = tok.text or "end of input"
        return LogicSyntaxError(f"{message} (found {shown!r})", tok.line, tok.col)

    def at(self, kind, text=None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def accept(self, kind, text=None):
        if self.at(kind, text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind, text=None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            raise self.error(f"expected {text or kind}")
        return t

    def program(self) -> LogicProgram:
        name = "MAIN"
        wrapped = self.accept("kw", "PROGRAM")
        if wrapped:
            name = self.expect("ident").text
        decls = []
        while self.at("kw", "VAR"):
            decls.extend(self.var_block())
        body = self.statements(stop={"END_PROGRAM"} if wrapped else set())
        if wrapped:
            self.expect("kw", "END_PROGRAM")
        if not self.at("eof"):
            raise self.error("unexpected token")
        return LogicProgram(name, decls, body)

    def var_block(self) -> list:
        self.expect("kw", "VAR")
        constant = bool(self.accept("kw", "CONSTANT"))
        decls = []
        while not self.accept("kw", "END_VAR"):
            decls.extend(self.decl(constant))
        return decls

    def decl(self, constant) -> list:
        first = self.expect("ident")
        names = [first]
        while self.accept("op", ","):
            names.append(self.expect("ident"))
        location = None
        if self.accept("kw", "AT"):
            loc_tok = self.expect("loc")
            try:
                location = LocatedAddress.parse(loc_tok.text)
            except LogicSyntaxError as exc:
                raise LogicSyntaxError(str(exc), loc_tok.line, loc_tok.col) from None
            if len(names) > 1:
                raise LogicSyntaxError("AT applies to a single variable", loc_tok.line, loc_tok.col)
        self.expect("op", ":")
        type_tok = self.tok
        if not (self.accept("kw", "BOOL") or self.accept("kw", "INT")):
            raise self.error("expected BOOL or INT")
        vtype = type_tok.text
        if location is not None and (location.width == "X") != (vtype == "BOOL"):
            raise LogicTypeError(f"{vtype} variable cannot live at {location}", type_tok.line, type_tok.col)
        initial = 0
        if self.accept("op", ":="):
            initial = self.init_literal(vtype)
        self.expect("op", ";")
        return [VarDecl(n.text, vtype, location, initial, constant, n.line, n.col) for n in names]

    def init_literal(self, vtype) -> int:
        t = self.tok
        if vtype == "BOOL":
            if self.accept("kw", "TRUE"):
                return 1
            if self.accept("kw", "FALSE"):
                return 0
            raise self.error("expected TRUE or FALSE")
        neg = bool(self.accept("op", "-"))
        num = self.expect("int")
        value = -int(num.text) if neg else int(num.text)
        if not INT_MIN <= value <= INT_MAX:
            raise LogicTypeError(f"INT literal {value} out of range", t.line, t.col)
        return value

    def statements(self, stop) -> list:
        out = []
        while self.tok.kind != "eof" and not (self.tok.kind == "kw" and self.tok.text in stop):
            out.append(self.statement())
        return out

    def statement(self):
        t = self.tok
        if self.accept("kw", "IF"):
            branches = []
            cond = self.expr()
            self.expect("kw", "THEN")
            branches.append((cond, self.statements({"ELSIF", "ELSE", "END_IF"})))
            while self.accept("kw", "ELSIF"):
                cond = self.expr()
                self.expect("kw", "THEN")
                branches.append((cond, self.statements({"ELSIF", "ELSE", "END_IF"})))
            orelse = []
            if self.accept("kw", "ELSE"):
                orelse = self.statements({"END_IF"})
            self.expect("kw", "END_IF")
            self.expect("op", ";")
            return If(branches, orelse, t.line, t.col)
        if t.kind == "ident":
            self.i += 1
            self.expect("op", ":=")
            expr = self.expr()
            self.expect("op", ";")
            return Assign(t.text, expr, t.line, t.col)
        raise self.error("expected a statement")

    def _binary(self, sub, ops):
        left = sub()
        while self.tok.kind in ("op", "kw") and self.tok.text in ops:
            t = self.tok
            self.i += 1
            left = Binary(t.line, t.col, op=t.text, left=left, right=sub())
        return left

    def expr(self):
        return self._binary(self.and_, {"OR"})

    def and_(self):
        return self._binary(self.eq, {"AND"})

    def eq(self):
        return self._binary(self.rel, {"=", "<>"})

    def rel(self):
        return self._binary(self.add, {"<", "<=", ">", ">="})

    def add(self):
        return self._binary(self.mul, {"+", "-"})

    def mul(self):
        return self._binary(self.unary, {"*"})

    def unary(self):
        t = self.tok
        if self.accept("kw", "NOT"):
            return Unary(t.line, t.col, op="NOT", operand=self.unary())
        if self.accept("op", "-"):
            if self.at("int"):
                num = self.expect("int")
                return Literal(t.line, t.col, value=-int(num.text), literal_type="INT")
            return Unary(t.line, t.col, op="-", operand=self.unary())
        return self.primary()

    def primary(self):
        t = self.tok
        if self.accept("int"):
            return Literal(t.line, t.col, value=int(t.text), literal_type="INT")
        if self.accept("kw", "TRUE"):
            return Literal(t.line, t.col, value=1, literal_type="BOOL")
        if self.accept("kw", "FALSE"):
            return Literal(t.line, t.col, value=0, literal_type="BOOL")
        if self.accept("kw", "ABS"):
            self.expect("op", "(")
            arg = self.expr()
            self.expect("op", ")")
            return Call(t.line, t.col, func="ABS", arg=arg)
        if self.accept("ident"):
            return Name(t.line, t.col, name=t.text)
        if self.accept("op", "("):
            inner = self.expr()
            self.expect("op", ")")
            return inner
        raise self.error("expected an expression")


# -- type checking ------------------------------------------------------------

def _check_expr(e: Expr, env: dict) -> str:
    if isinstance(e, Literal):
        if e.literal_type == "INT" and not INT_MIN <= e.value <= INT_MAX:
            raise LogicTypeError(f"INT literal {e.value} out of range", e.line, e.col)
        e.type = e.literal_type
    elif isinstance(e, Name):
        decl = env.get(e.name.upper())
        if decl is None:
            raise LogicTypeError(f"undeclared variable {e.name}", e.line, e.col)
        e.type = decl.type
    elif isinstance(e, Unary):
        t = _check_expr(e.operand, env)
        want = "BOOL" if e.op == "NOT" else "INT"
        if t != want:
            raise LogicTypeError(f"{e.op} needs {want}, got {t}", e.line, e.col)
        e.type = want
    elif isinstance(e, Call):
        t = _check_expr(e.arg, env)
        if t != "INT":
            raise LogicTypeError(f"ABS needs INT, got {t}", e.line, e.col)
        e.type = "INT"
    elif isinstance(e, Binary):
        lt, rt = _check_expr(e.left, env), _check_expr(e.right, env)
        if e.op in ("AND", "OR"):
            if lt != "BOOL" or rt != "BOOL":
                raise LogicTypeError(f"{e.op} needs BOOL operands, got {lt} and {rt}", e.line, e.col)
            e.type = "BOOL"
        elif e.op in ("+", "-", "*"):
            if lt != "INT" or rt != "INT":
                raise LogicTypeError(f"'{e.op}' needs INT operands, got {lt} and {rt}", e.line, e.col)
            e.type = "INT"
        elif e.op in ("=", "<>"):
            if lt != rt:
                raise LogicTypeError(f"cannot compare {lt} with {rt}", e.line, e.col)
            e.type = "BOOL"
        else:
            if lt != "INT" or rt != "INT":
                raise LogicTypeError(f"'{e.op}' needs INT operands, got {lt} and {rt}", e.line, e.col)
            e.type = "BOOL"
    else:  # pragma: no cover
        raise LogicTypeError(f"unknown node {e!r}")
    return e.type


def _check_stmts(stmts, env):
    for s in stmts:
        if isinstance(s, Assign):
            decl = env.get(s.target.upper())
            if decl is None:
                raise LogicTypeError(f"undeclared variable {s.target}", s.line, s.col)
            if decl.constant:
                raise LogicTypeError(f"cannot assign constant {s.target}", s.line, s.col)
            if decl.location is not None and decl.location.direction == "I":
                raise LogicTypeError(f"cannot assign input {s.target}", s.line, s.col)
            t = _check_expr(s.expr, env)
            if t != decl.type:
                raise LogicTypeError(f"cannot assign {t} to {decl.type} {s.target}", s.line, s.col)
        else:
            for cond, body in s.branches:
                t = _check_expr(cond, env)
                if t != "BOOL":
                    raise LogicTypeError(f"IF condition must be BOOL, got {t}", cond.line, cond.col)
                _check_stmts(body, env)
            _check_stmts(s.orelse, env)


def check(program: LogicProgram) -> LogicProgram:
    env = {}
    seen_locations = {}
    for d in program.declarations:
        key = d.name.upper()
        if key in env:
            raise LogicTypeError(f"duplicate variable {d.name}", d.line, d.col)
        env[key] = d
        if d.location is not None:
            if d.location in seen_locations:
                raise DuplicateLocation(
                    f"{d.name} and {seen_locations[d.location]} both at {d.location}", d.line, d.col)
            seen_locations[d.location] = d.name
    _check_stmts(program.body, env)
    return program


def parse(source: str) -> LogicProgram:
    """Parse and type-check ST source."""
    return check(_Parser(tokenize(source)).program())
