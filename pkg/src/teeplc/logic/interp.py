"""Binding of located variables and cycle evaluation.

Statements are compiled once into Python closures over a flat slot list.
"""
from __future__ import annotations

from dataclasses import dataclass

from .image import ImageShape, ProcessImage, to_signed, to_unsigned
from .parser import (
    INT_MAX,
    INT_MIN,
    Assign,
    Binary,
    Call,
    DuplicateLocation,
    Literal,
    LogicError,
    LogicProgram,
    Name,
    Unary,
    parse,
)


class AddressOutOfRange(LogicError):
    pass


class ArithmeticOverflow(LogicError):
    pass


@dataclass
class BoundProgram:
    program: LogicProgram
    shape: ImageShape
    slots: dict  # upper-case name -> slot index
    inputs: list  # (slot, bank, index, is_word)
    outputs: list  # (slot, bank, index, is_word)
    memory: list  # persistent internal variable values, by slot
    run: object  # compiled body: callable(env)

    def slot_of(self, name: str) -> int:
        return self.slots[name.upper()]


def _checked(value, node):
    if not INT_MIN <= value <= INT_MAX:
        raise ArithmeticOverflow(f"16-bit overflow ({value})", node.line, node.col)
    return value


def _compile_expr(e, slots):
    if isinstance(e, Literal):
        v = e.value
        return lambda env: v
    if isinstance(e, Name):
        s = slots[e.name.upper()]
        return lambda env: env[s]
    if isinstance(e, Unary):
        f = _compile_expr(e.operand, slots)
        if e.op == "NOT":
            return lambda env: 0 if f(env) else 1
        return lambda env: _checked(-f(env), e)
    if isinstance(e, Call):
        f = _compile_expr(e.arg, slots)
        return lambda env: _checked(abs(f(env)), e)
    if isinstance(e, Binary):
        a, b = _compile_expr(e.left, slots), _compile_expr(e.right, slots)
        op = e.op
        if op == "AND":
            return lambda env: 1 if (a(env) and b(env)) else 0
        if op == "OR":
            return lambda env: 1 if (a(env) or b(env)) else 0
        if op == "+":
            return lambda env: _checked(a(env) + b(env), e)
        if op == "-":
            return lambda env: _checked(a(env) - b(env), e)
        if op == "*":
            return lambda env: _checked(a(env) * b(env), e)
        cmp = {
            "=": lambda x, y: x == y,
            "<>": lambda x, y: x != y,
            "<": lambda x, y: x < y,
            "<=": lambda x, y: x <= y,
            ">": lambda x, y: x > y,
            ">=": lambda x, y: x >= y,
        }[op]
        return lambda env: 1 if cmp(a(env), b(env)) else 0
    raise LogicError(f"cannot compile {e!r}")  # pragma: no cover


def _compile_block(stmts, slots):
    compiled = []
    for s in stmts:
        if isinstance(s, Assign):
            compiled.append(_compile_assign(slots[s.target.upper()], _compile_expr(s.expr, slots)))
        else:
            branches = [(_compile_expr(c, slots), _compile_block(b, slots)) for c, b in s.branches]
            orelse = _compile_block(s.orelse, slots)
            compiled.append(_compile_if(branches, orelse))

    def run(env):
        for step in compiled:
            step(env)
    return run


def _compile_assign(slot, f):
    def step(env):
        env[slot] = f(env)
    return step


def _compile_if(branches, orelse):
    def step(env):
        for cond, body in branches:
            if cond(env):
                body(env)
                return
        orelse(env)
    return step


def bind(program: LogicProgram, shape: ImageShape) -> BoundProgram:
    """Resolve every located variable to an image slot (bounds-checked)."""
    slots, inputs, outputs, memory = {}, [], [], []
    limits = {
        ("I", "X"): shape.input_bits,
        ("Q", "X"): shape.output_bits,
        ("I", "W"): shape.input_words,
        ("Q", "W"): shape.output_words,
    }
    seen = set()
    for i, d in enumerate(program.declarations):
        slots[d.name.upper()] = i
        memory.append(d.initial)
        loc = d.location
        if loc is None:
            continue
        if loc in seen:  # parse() already rejects this; bind may see hand-built ASTs
            raise DuplicateLocation(f"{loc} bound twice", d.line, d.col)
        seen.add(loc)
        if loc.index >= limits[(loc.direction, loc.width)]:
            raise AddressOutOfRange(f"{d.name} at {loc} outside image bank of "
                                    f"{limits[(loc.direction, loc.width)]}", d.line, d.col)
        entry = (i, loc.index, loc.width == "W")
        (inputs if loc.direction == "I" else outputs).append(entry)
    run = _compile_block(program.body, slots)
    return BoundProgram(program, shape, slots, inputs, outputs, memory, run)


def eval_cycle(bound: BoundProgram, image: ProcessImage) -> ProcessImage:
    """Run one logic scan; returns a new image, ``image`` is left untouched.

    Internal variables persist in ``bound.memory``; output variables start
    from the image's current output values, so latches hold between cycles.
    On ArithmeticOverflow nothing is committed.
    """
    if image.shape != bound.shape:
        raise AddressOutOfRange(f"image shape {image.shape} != bound shape {bound.shape}")
    env = list(bound.memory)
    for slot, index, is_word in bound.inputs:
        env[slot] = to_signed(image.input_words[index]) if is_word else image.input_bits[index]
    for slot, index, is_word in bound.outputs:
        env[slot] = to_signed(image.output_words[index]) if is_word else image.output_bits[index]
    bound.run(env)
    out = image.copy()
    for slot, index, is_word in bound.outputs:
        if is_word:
            out.output_words[index] = to_unsigned(env[slot])
        else:
            out.output_bits[index] = 1 if env[slot] else 0
    bound.memory[:] = env
    return out


def load_program(source: str, shape: ImageShape) -> BoundProgram:
    return bind(parse(source), shape)
