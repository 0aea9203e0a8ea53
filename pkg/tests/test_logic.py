import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_program, render_program, truth_table
from teeplc.logic import (
    AddressOutOfRange,
    ArithmeticOverflow,
    DuplicateLocation,
    ImageShape,
    LocatedAddress,
    LogicSyntaxError,
    LogicTypeError,
    ProcessImage,
    bind,
    bundled,
    eval_cycle,
    load_program,
    parse,
)
from teeplc.logic.parser import Assign, Binary, Call, If, Name

SHAPE = ImageShape(8, 8, 2, 2)


def prog(decls, body):
    return f"PROGRAM T\nVAR\n{decls}\nEND_VAR\n{body}\nEND_PROGRAM\n"


def run(source, inputs=(), words=(), shape=SHAPE, outputs=None):
    bound = load_program(source, shape)
    img = ProcessImage.zeros(shape)
    for i, v in enumerate(inputs):
        img.input_bits[i] = v
    for i, v in enumerate(words):
        img.input_words[i] = v & 0xFFFF
    if outputs:
        for i, v in enumerate(outputs):
            img.output_bits[i] = v
    return eval_cycle(bound, img)


def test_pump_assignment_ast():
    p = parse(prog("S2 AT %IX0.1 : BOOL;\nP AT %QX0.1 : BOOL;", "P := S2;"))
    (stmt,) = p.body
    assert isinstance(stmt, Assign) and stmt.target == "P"
    assert isinstance(stmt.expr, Name) and stmt.expr.name == "S2"
    assert [str(d.location) for d in p.located] == ["%IX0.1", "%QX0.1"]


def test_abs_conditional_ast():
    src = prog("W1 AT %IW0 : INT;\nW2 AT %IW1 : INT;\nCB AT %QX0.0 : BOOL;\nTH : INT := 10;",
               "IF ABS(W1 - W2) < TH THEN CB := TRUE; END_IF;")
    (stmt,) = parse(src).body
    assert isinstance(stmt, If)
    cond = stmt.branches[0][0]
    assert isinstance(cond, Binary) and cond.op == "<"
    assert isinstance(cond.left, Call) and cond.left.func == "ABS"


def test_and_of_ints_is_type_error():
    with pytest.raises(LogicTypeError):
        parse(prog("X : BOOL;", "X := 1 AND 2;"))


@pytest.mark.parametrize("body,line,col", [
    ("X := ;", 5, 6),
    ("X := TRUE", 6, 1),
    ("IF X THEN X := FALSE;", 6, 1),
])
def test_syntax_errors_carry_position(body, line, col):
    with pytest.raises(LogicSyntaxError) as info:
        parse(prog("X : BOOL;", body))
    assert (info.value.line, info.value.col) == (line, col)
    assert f"{line}:{col}" in str(info.value)


def test_mixed_types_rejected():
    with pytest.raises(LogicTypeError):
        parse(prog("X : BOOL;\nN : INT;", "X := N;"))
    with pytest.raises(LogicTypeError):
        parse(prog("X : BOOL;\nN : INT;", "X := X = N;"))


def test_cannot_assign_input():
    with pytest.raises(LogicTypeError):
        parse(prog("I AT %IX0.0 : BOOL;", "I := TRUE;"))


def test_bind_boundary():
    p = parse(prog("A AT %IX0.7 : BOOL;", ""))
    b = bind(p, ImageShape(8, 8))
    assert b.inputs[0][1] == 7


def test_bind_overflow():
    with pytest.raises(AddressOutOfRange):
        bind(parse(prog("A AT %IX1.0 : BOOL;", "")), ImageShape(8, 8))


def test_duplicate_location():
    with pytest.raises(DuplicateLocation):
        parse(prog("A AT %QX0.0 : BOOL;\nB AT %QX0.0 : BOOL;", ""))


def test_located_address_parse():
    assert LocatedAddress.parse("%IX1.3") == LocatedAddress("I", "X", 11)
    assert str(LocatedAddress.parse("%qw4")) == "%QW4"
    with pytest.raises(LogicSyntaxError):
        LocatedAddress.parse("%IX0.8")


def test_tank_fill_and_pump():
    # LEVEL below LOW with demand on -> motor and pump on
    out = run(bundled("tank"), inputs=[1], words=[100], shape=ImageShape(8, 8, 1, 0))
    assert out.output_bits[:2] == [1, 1]


def test_tank_hysteresis_holds():
    src = bundled("tank")
    shape = ImageShape(8, 8, 1, 0)
    assert run(src, words=[500], shape=shape, outputs=[1, 0]).output_bits[0] == 1
    assert run(src, words=[500], shape=shape, outputs=[0, 0]).output_bits[0] == 0
    assert run(src, words=[700], shape=shape, outputs=[1, 0]).output_bits[0] == 0


def test_generator_sync_close():
    # |5000 - 5004| = 4 < 10
    out = run(bundled("generator"), words=[5000, 5004], shape=ImageShape(8, 8, 2, 0))
    assert out.output_bits[:2] == [1, 1]


def test_generator_sync_wide_gap_stays_open():
    out = run(bundled("generator"), words=[5000, 5010], shape=ImageShape(8, 8, 2, 0))
    assert out.output_bits[:2] == [0, 0]


def test_empty_program_is_identity():
    img = ProcessImage([1, 0, 1, 0, 0, 0, 0, 0], [0, 1] + [0] * 6, [5, 6], [7, 8])
    out = eval_cycle(load_program(prog("", ""), SHAPE), img)
    assert out == img


def test_overflow_is_an_error():
    src = prog("A AT %IW0 : INT;\nB AT %QW0 : INT;", "B := A * 2;")
    with pytest.raises(ArithmeticOverflow):
        run(src, words=[20000])


def test_negative_words_round_trip():
    src = prog("A AT %IW0 : INT;\nB AT %QW0 : INT;", "B := A - 10;")
    assert run(src, words=[-5]).output_words[0] == (-15) & 0xFFFF


def test_int_arithmetic_and_abs():
    src = prog("A AT %IW0 : INT;\nB AT %IW1 : INT;\nC AT %QW0 : INT;", "C := ABS(A - B) * 3 + -2;")
    assert run(src, words=[3, 10]).output_words[0] == 19


def test_determinism_and_input_immutability():
    bound = load_program(bundled("tank"), ImageShape(8, 8, 1, 0))
    img = ProcessImage.zeros(ImageShape(8, 8, 1, 0))
    img.input_bits[0], img.input_words[0] = 1, 250
    before = img.copy()
    first = eval_cycle(bound, img)
    for _ in range(1000):
        assert eval_cycle(bound, img) == first
    assert img.input_bits == before.input_bits and img.input_words == before.input_words


def check_against_oracle(kinds, stmts, rng):
    source = render_program(kinds, stmts, rng)
    free, outs, table = truth_table(kinds, stmts)
    loc = {n: idx for n, (k, idx) in kinds.items()}
    for values, expected in table.items():
        bound = load_program(source, ImageShape(8, 8))
        img = ProcessImage.zeros(ImageShape(8, 8))
        for name, v in zip(free, values):
            bank = img.input_bits if kinds[name][0] == "I" else img.output_bits
            bank[loc[name]] = int(v)
        out = eval_cycle(bound, img)
        got = tuple(bool(out.output_bits[loc[n]]) for n in outs)
        assert got == expected, (source, values)


@given(st.integers(0, 2**32 - 1))
def test_interpreter_matches_truth_table(seed):
    rng = random.Random(seed)
    kinds, stmts = random_program(rng)
    check_against_oracle(kinds, stmts, rng)
