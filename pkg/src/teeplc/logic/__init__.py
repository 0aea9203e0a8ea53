"""Structured Text subset: parse, bind to a process image, evaluate."""
from .image import ImageShape, ProcessImage, to_signed, to_unsigned
from .interp import AddressOutOfRange, ArithmeticOverflow, BoundProgram, bind, eval_cycle, load_program
from .parser import (
    DuplicateLocation,
    LocatedAddress,
    LogicError,
    LogicProgram,
    LogicSyntaxError,
    LogicTypeError,
    parse,
)
from .programs import GEN_THRESHOLD, TANK_HIGH, TANK_LOW, bundled, copy_program
