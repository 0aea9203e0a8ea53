from __future__ import annotations

import threading


class BankRangeError(IndexError):
    pass


class RegisterBank:
    """Server-side Modbus data model. Every access is bounds-checked and serialized."""

    def __init__(self, coils=0, discrete_inputs=0, holding_registers=0, input_registers=0):
        self.coils = [0] * coils
        self.discrete_inputs = [0] * discrete_inputs
        self.holding_registers = [0] * holding_registers
        self.input_registers = [0] * input_registers
        self.lock = threading.RLock()

    def _table(self, name):
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(name) from None

    def read(self, table: str, address: int, count: int) -> list[int]:
        with self.lock:
            data = self._table(table)
            if address < 0 or count < 1 or address + count > len(data):
                raise BankRangeError(f"{table}[{address}:{address + count}] outside 0..{len(data)}")
            return data[address:address + count]

    def write(self, table: str, address: int, values) -> None:
        with self.lock:
            data = self._table(table)
            values = list(values)
            if address < 0 or not values or address + len(values) > len(data):
                raise BankRangeError(f"{table}[{address}:{address + len(values)}] outside 0..{len(data)}")
            if table in ("coils", "discrete_inputs"):
                values = [1 if v else 0 for v in values]
            else:
                values = [int(v) & 0xFFFF for v in values]
            data[address:address + len(values)] = values

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "coils": list(self.coils),
                "discrete_inputs": list(self.discrete_inputs),
                "holding_registers": list(self.holding_registers),
                "input_registers": list(self.input_registers),
            }
