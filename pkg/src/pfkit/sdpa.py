"""SDPA sparse format (``.dat-s``) export and import.

An ``SdpProblem`` over ``y = (1, x_1..x_m)`` maps onto the SDPA primal

    minimize  sum_i c_i x_i   subject to   sum_i x_i F_i - F_0  psd,

so ``F_0`` is the negated constant coefficient of every block.  Scalar blocks
and linear equalities (as pairs of opposite rows) share one diagonal block,
written with a negative size.  SDPA has no objective constant; it is kept in a
``*`` comment line that :func:`read_sdpa` understands.
"""

from __future__ import annotations

import re
from pathlib import Path

from .sdp import Block, SdpProblem

__all__ = ["write_sdpa", "dumps_sdpa", "read_sdpa", "loads_sdpa"]

_CONST = "* objective constant:"


def _num(v: float) -> str:
    return repr(float(v) + 0.0)


def dumps_sdpa(problem: SdpProblem) -> str:
    m = problem.nvars - 1
    c = [0.0] * problem.nvars
    for i, v in problem.objective.items():
        c[i] += v

    matrix_blocks = [b for b in problem.blocks if b.size > 1]
    scalar_rows = []  # each a dict id -> coefficient, meaning sum >= 0
    for b in problem.blocks:
        if b.size == 1:
            row: dict[int, float] = {}
            for _, _, i, v in b.entries():
                row[i] = row.get(i, 0.0) + v
            scalar_rows.append(row)
    for e in problem.equalities:
        scalar_rows.append(dict(e))
        scalar_rows.append({i: -v for i, v in e.items()})

    sizes = [b.size for b in matrix_blocks]
    if scalar_rows:
        sizes.append(-len(scalar_rows))

    lines = [f"* pfkit SDP export: {problem.nvars - 1} variables, {len(problem.blocks)} blocks",
             f"{_CONST} {_num(c[0])}",
             str(m), str(len(sizes)), " ".join(str(s) for s in sizes),
             " ".join(_num(v) for v in c[1:])]

    def emit(block_no, r, col, i, v):
        # F_0 carries the negated constant part
        mat, val = (0, -v) if i == 0 else (i, v)
        if val:
            lines.append(f"{mat} {block_no} {r + 1} {col + 1} {_num(val)}")

    for k, b in enumerate(matrix_blocks, start=1):
        acc: dict[tuple, float] = {}
        for r, col, i, v in b.entries():
            acc[(i, r, col)] = acc.get((i, r, col), 0.0) + v
        for (i, r, col), v in sorted(acc.items()):
            emit(k, r, col, i, v)
    if scalar_rows:
        k = len(matrix_blocks) + 1
        for r, row in enumerate(scalar_rows):
            for i, v in sorted(row.items()):
                emit(k, r, r, i, v)
    return "\n".join(lines) + "\n"


def write_sdpa(problem: SdpProblem, path: str | Path) -> None:
    Path(path).write_text(dumps_sdpa(problem))


_SEP = re.compile(r"[,(){}\s]+")


def loads_sdpa(text: str) -> SdpProblem:
    """Parse SDPA sparse text into an ``SdpProblem`` (diagonal blocks become scalar blocks)."""
    const = 0.0
    data: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith(_CONST):
            const = float(line[len(_CONST):])
            continue
        if not line or line[0] in '*"':
            continue
        data.append(line)
    if len(data) < 4:
        raise ValueError("SDPA file is truncated")

    def nums(line):
        return [t for t in _SEP.split(line) if t]

    try:
        m = int(nums(data[0])[0])
        nblocks = int(nums(data[1])[0])
        sizes = [int(float(t)) for t in nums(data[2])][:nblocks]
        c = [float(t) for t in nums(data[3])][:m]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed SDPA header: {exc}") from None
    if len(sizes) != nblocks or len(c) != m:
        raise ValueError("SDPA header counts do not match")

    cells: dict[int, list] = {k: [] for k in range(1, nblocks + 1)}
    for line in data[4:]:
        t = nums(line)
        if len(t) != 5:
            raise ValueError(f"bad SDPA entry line: {line!r}")
        mat, blk, i, j = (int(float(x)) for x in t[:4])
        val = float(t[4])
        if not (0 <= mat <= m and 1 <= blk <= nblocks):
            raise ValueError(f"entry out of range: {line!r}")
        size = abs(sizes[blk - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise ValueError(f"entry index out of range: {line!r}")
        if sizes[blk - 1] < 0 and i != j:
            raise ValueError(f"off-diagonal entry in diagonal block: {line!r}")
        # back to the y-form: constant coefficient is -F_0
        cells[blk].append((min(i, j) - 1, max(i, j) - 1, mat, -val if mat == 0 else val))

    blocks: list[Block] = []
    for k, size in enumerate(sizes, start=1):
        ent = cells[k]
        if size > 0:
            blocks.append(Block(f"block {k}", size, lambda ent=ent: iter(ent)))
        else:
            for r in range(-size):
                row = [(0, 0, i, v) for rr, _, i, v in ent if rr == r]
                blocks.append(Block(f"block {k} row {r + 1}", 1, lambda row=row: iter(row)))
    objective = {i + 1: v for i, v in enumerate(c) if v}
    if const:
        objective[0] = const
    return SdpProblem(m + 1, blocks, objective, meta={"mode": "sdpa"})


def read_sdpa(path: str | Path) -> SdpProblem:
    return loads_sdpa(Path(path).read_text())
