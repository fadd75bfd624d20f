"""Persistent execution stack.

Stacks are immutable parent-linked nodes. Push and pop return new values in
O(1) and never disturb existing ones, so a parser configuration can be
snapshotted or branched by keeping a reference.
"""

from __future__ import annotations

from typing import Iterator


class ExecStack:
    __slots__ = ("symbol", "parent", "depth", "_hash")

    def __init__(self, symbol: int | None, parent: "ExecStack | None") -> None:
        self.symbol = symbol
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1
        self._hash = hash((symbol, 0 if parent is None else parent._hash, self.depth))

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def push(self, symbol: int) -> "ExecStack":
        return ExecStack(symbol, self)

    def pop(self) -> tuple[int, "ExecStack"]:
        if self.parent is None:
            raise IndexError("pop from empty stack")
        return self.symbol, self.parent

    def top(self, n: int) -> tuple[int, ...]:
        """Up to ``n`` symbols from the top; shorter iff the stack is shallower."""
        out = []
        node = self
        while node.parent is not None and len(out) < n:
            out.append(node.symbol)
            node = node.parent
        return tuple(out)

    def __iter__(self) -> Iterator[int]:
        node = self
        while node.parent is not None:
            yield node.symbol
            node = node.parent

    def __len__(self) -> int:
        return self.depth

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, ExecStack):
            return NotImplemented
        a, b = self, other
        # iterative, so deep stacks do not hit the recursion limit
        while a is not b:
            if a._hash != b._hash or a.depth != b.depth or a.symbol != b.symbol:
                return False
            a, b = a.parent, b.parent
            if a is None or b is None:
                return a is b
        return True

    def __repr__(self) -> str:
        return f"ExecStack({list(self)[::-1]})"


ROOT = ExecStack(None, None)
