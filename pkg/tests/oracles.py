"""Independent reference models used by the tests.

Nothing here imports the package under test.
"""
from __future__ import annotations

import itertools
import random

# -- boolean ST programs --------------------------------------------------------
# Expressions are tuples: ("var", name) ("lit", bool) ("not", e) (op, l, r)
# with op in AND/OR/=/<>. Statements: ("set", name, e) or ("if", [(c, body)], else).

PREC = {"OR": 1, "AND": 2, "=": 3, "<>": 3}
ATOM = 9


def random_expr(rng, names, depth):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.15:
            return ("lit", rng.random() < 0.5)
        return ("var", rng.choice(names))
    r = rng.random()
    if r < 0.2:
        return ("not", random_expr(rng, names, depth - 1))
    op = rng.choice(["AND", "OR", "=", "<>"])
    return (op, random_expr(rng, names, depth - 1), random_expr(rng, names, depth - 1))


def random_program(rng: random.Random):
    """Return (decls, statements) with at most 4 BOOLs and 3 statements."""
    n = rng.randint(1, 4)
    names = [f"V{i}" for i in range(n)]
    kinds = {}
    n_in = rng.randint(0, n - 1) if n > 1 else 0
    for i, name in enumerate(names):
        if i < n_in:
            kinds[name] = ("I", i)
        elif rng.random() < 0.7:
            kinds[name] = ("Q", i)
        else:
            kinds[name] = ("M", None)
    targets = [v for v in names if kinds[v][0] != "I"]
    budget = [rng.randint(1, 3)]

    def block(limit):
        out = []
        while budget[0] > 0 and len(out) < limit:
            budget[0] -= 1
            if budget[0] > 0 and rng.random() < 0.35:
                branches = [(random_expr(rng, names, 2), block(1))]
                if budget[0] > 0 and rng.random() < 0.3:
                    branches.append((random_expr(rng, names, 2), block(1)))
                orelse = block(1) if budget[0] > 0 and rng.random() < 0.5 else []
                out.append(("if", branches, orelse))
            else:
                out.append(("set", rng.choice(targets), random_expr(rng, names, 2)))
        return out

    return kinds, block(3)


def render_expr(e, rng=None, parent=0, right=False):
    kind = e[0]
    if kind == "lit":
        return "TRUE" if e[1] else "FALSE"
    if kind == "var":
        return e[1]
    if kind == "not":
        text, prec = "NOT " + render_expr(e[1], rng, 8), 8
    else:
        p = PREC[kind]
        text = f"{render_expr(e[1], rng, p)} {kind} {render_expr(e[2], rng, p, True)}"
        prec = p
    need = prec < parent or (right and prec == parent)
    if need or (rng is not None and rng.random() < 0.1):
        return f"({text})"
    return text


def render_program(kinds, stmts, rng=None) -> str:
    lines = ["PROGRAM RANDOM", "VAR"]
    for name, (k, idx) in kinds.items():
        loc = f" AT %{k}X0.{idx}" if k in ("I", "Q") else ""
        lines.append(f"    {name}{loc} : BOOL;")
    lines.append("END_VAR")

    def emit(block, indent):
        for s in block:
            if s[0] == "set":
                lines.append(f"{indent}{s[1]} := {render_expr(s[2], rng)};")
            else:
                for i, (cond, body) in enumerate(s[1]):
                    kw = "IF" if i == 0 else "ELSIF"
                    lines.append(f"{indent}{kw} {render_expr(cond, rng)} THEN")
                    emit(body, indent + "    ")
                if s[2]:
                    lines.append(f"{indent}ELSE")
                    emit(s[2], indent + "    ")
                lines.append(f"{indent}END_IF;")

    emit(stmts, "")
    lines.append("END_PROGRAM")
    return "\n".join(lines) + "\n"


def eval_expr(e, env):
    kind = e[0]
    if kind == "lit":
        return e[1]
    if kind == "var":
        return env[e[1]]
    if kind == "not":
        return not eval_expr(e[1], env)
    a, b = eval_expr(e[1], env), eval_expr(e[2], env)
    return {"AND": a and b, "OR": a or b, "=": a == b, "<>": a != b}[kind]


def run_block(block, env):
    for s in block:
        if s[0] == "set":
            env[s[1]] = eval_expr(s[2], env)
        else:
            for cond, body in s[1]:
                if eval_expr(cond, env):
                    run_block(body, env)
                    break
            else:
                run_block(s[2], env)


def truth_table(kinds, stmts):
    """All starting assignments of inputs and latched outputs -> final outputs.

    Internal variables start FALSE.
    """
    free = [n for n, (k, _) in kinds.items() if k in ("I", "Q")]
    outs = [n for n, (k, _) in kinds.items() if k == "Q"]
    table = {}
    for values in itertools.product([False, True], repeat=len(free)):
        env = {n: False for n in kinds}
        env.update(zip(free, values))
        run_block(stmts, env)
        table[values] = tuple(env[n] for n in outs)
    return free, outs, table


# -- least squares -------------------------------------------------------------

def ols_by_normal_equations(xs, ys):
    """Slope/intercept by solving the 2x2 normal equations with Cramer's rule."""
    n = len(xs)
    sx, sy = sum(xs), sum(ys)
    sxx = sum(x * x for x in xs)
    sxy = sum(x * y for x, y in zip(xs, ys))
    det = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / det
    intercept = (sxx * sy - sx * sxy) / det
    return slope, intercept
