"""Bundled control programs."""
from __future__ import annotations

from importlib import resources

TANK_LOW = 300
TANK_HIGH = 700
GEN_THRESHOLD = 10


def bundled(name: str) -> str:
    """Source text of a bundled program: ``tank`` or ``generator``."""
    return resources.files(__package__).joinpath("programs", f"{name}.st").read_text()


def copy_program(pairs: int) -> str:
    """Benchmark logic: actuator k mirrors sensor k."""
    decls = []
    body = []
    for k in range(pairs):
        decls.append(f"    I{k} AT %IX{k // 8}.{k % 8} : BOOL;")
        decls.append(f"    Q{k} AT %QX{k // 8}.{k % 8} : BOOL;")
        body.append(f"Q{k} := I{k};")
    return "PROGRAM COPY\nVAR\n" + "\n".join(decls) + "\nEND_VAR\n" + "\n".join(body) + "\nEND_PROGRAM\n"
