"""Target trees, CFG extraction and the rule/word derivation automaton.

A formed target tree looks like::

    (ROOT (S (NP (pre _The _cat)) (VP (pre _eat s) (NP (pre _fi sh))) (PUNC (pre _.))))

Nonterminals carry tags, preterminals are all tagged ``pre`` and own the
subword leaves of one phrase.  Generation walks this tree top-down and
left-to-right; `canonical_derivation` records that walk and
`replay_derivation` runs it backwards.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

ROOT = "ROOT"
PRE = "pre"
NULL_TAG = "NULL"
EOS = "<eos>"
EOP = "<eop>"
SENTINEL = 0


class TreeError(ValueError):
    pass


class GrammarError(ValueError):
    """A rule was applied to the wrong open symbol, or is unknown."""


class DerivationError(ValueError):
    pass


class Kind(enum.Enum):
    TERMINAL = "T"
    NONTERMINAL = "N"
    PRETERMINAL = "P"


@dataclass(frozen=True)
class Node:
    kind: Kind
    label: str
    children: tuple[int, ...] = ()
    parent: int | None = None


class Tree:
    """Ordered rooted tree stored as a node arena.

    Node ids are assigned in pre-order, so two structurally equal trees
    also have identical arenas.
    """

    __slots__ = ("nodes", "root")

    def __init__(self, nodes: Sequence[Node], root: int = 0):
        self.nodes = tuple(nodes)
        self.root = root

    # construction ---------------------------------------------------------

    @classmethod
    def build(cls, spec) -> "Tree":
        """Build from nested tuples ``(kind, label, [children...])``.

        A bare string is a terminal.  Children of a preterminal may be
        given as a list of strings.
        """
        nodes: list[Node] = []

        def visit(item, parent):
            idx = len(nodes)
            if isinstance(item, str):
                nodes.append(Node(Kind.TERMINAL, item, (), parent))
                return idx
            kind, label, kids = item
            nodes.append(None)  # reserve pre-order slot
            child_ids = tuple(visit(k, idx) for k in kids)
            nodes[idx] = Node(kind, label, child_ids, parent)
            return idx

        visit(spec, None)
        return cls(nodes, 0)

    def to_spec(self, idx: int | None = None):
        idx = self.root if idx is None else idx
        node = self.nodes[idx]
        if node.kind is Kind.TERMINAL:
            return node.label
        return (node.kind, node.label, [self.to_spec(c) for c in node.children])

    # queries --------------------------------------------------------------

    def __getitem__(self, idx: int) -> Node:
        return self.nodes[idx]

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tree):
            return NotImplemented
        return self._signature(self.root) == other._signature(other.root)

    def __hash__(self) -> int:
        return hash(self._signature(self.root))

    def _signature(self, idx):
        node = self.nodes[idx]
        return (node.kind, node.label, tuple(self._signature(c) for c in node.children))

    def __repr__(self) -> str:
        return f"Tree({self.to_bracket()})"

    def preorder(self, idx: int | None = None) -> Iterator[int]:
        stack = [self.root if idx is None else idx]
        while stack:
            i = stack.pop()
            yield i
            stack.extend(reversed(self.nodes[i].children))

    def leaves(self) -> list[str]:
        return self.leaves_of(self.root)

    def leaves_of(self, idx: int) -> list[str]:
        return [self.nodes[i].label for i in self.preorder(idx) if self.nodes[i].kind is Kind.TERMINAL]

    def count(self, kind: Kind) -> int:
        return sum(1 for n in self.nodes if n.kind is kind)

    def depth(self, idx: int | None = None) -> int:
        """Number of edges on the longest root-to-leaf path."""
        node = self.nodes[self.root if idx is None else idx]
        if not node.children:
            return 0
        return 1 + max(self.depth(c) for c in node.children)

    def validate(self) -> None:
        """Check the invariants of a formed target tree."""
        roots = [i for i, n in enumerate(self.nodes) if n.parent is None]
        if roots != [self.root]:
            raise TreeError(f"expected exactly one root, found {roots}")
        for i, node in enumerate(self.nodes):
            for c in node.children:
                if self.nodes[c].parent != i:
                    raise TreeError(f"node {c} has wrong parent pointer")
            kinds = {self.nodes[c].kind for c in node.children}
            if node.kind is Kind.TERMINAL and node.children:
                raise TreeError(f"terminal {node.label!r} has children")
            if node.kind is Kind.PRETERMINAL and kinds - {Kind.TERMINAL}:
                raise TreeError(f"preterminal {node.label!r} has non-terminal children")
            if node.kind is Kind.NONTERMINAL:
                if not node.children:
                    raise TreeError(f"nonterminal {node.label!r} has no children")
                if Kind.TERMINAL in kinds:
                    raise TreeError(f"nonterminal {node.label!r} has a terminal child")

    # bracket format -------------------------------------------------------

    def to_bracket(self, idx: int | None = None) -> str:
        node = self.nodes[self.root if idx is None else idx]
        if node.kind is Kind.TERMINAL:
            return node.label
        if not node.children:
            return f"({node.label})"
        return "(" + node.label + " " + " ".join(self.to_bracket(c) for c in node.children) + ")"

    @classmethod
    def from_bracket(cls, text: str, line: int = 0) -> "Tree":
        return parse_bracket(text, line)


def parse_bracket(text: str, line: int = 0) -> Tree:
    """Parse one Penn-style bracketed tree.

    A node whose children are all bare tokens is a preterminal; a node with
    no children at all is an (unexpanded) nonterminal.
    """
    tokens: list[tuple[str, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append((ch, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append((text[i:j], i))
            i = j
    if not tokens:
        raise TreeError(f"line {line}: empty tree")

    pos = 0

    def fail(msg, col):
        raise TreeError(f"line {line}, column {col + 1}: {msg}")

    def parse_node():
        nonlocal pos
        tok, col = tokens[pos]
        if tok != "(":
            pos += 1
            return tok
        pos += 1
        label = ""
        if pos < len(tokens) and tokens[pos][0] not in "()":
            label = tokens[pos][0]
            pos += 1
        kids = []
        while True:
            if pos >= len(tokens):
                fail("unbalanced parentheses: missing ')'", col)
            if tokens[pos][0] == ")":
                pos += 1
                break
            kids.append(parse_node())
        if kids and all(isinstance(k, str) for k in kids):
            return (Kind.PRETERMINAL, label, kids)
        if any(isinstance(k, str) for k in kids):
            # mixed terminal/nonterminal children: wrap bare tokens so that
            # the result stays a well-kinded tree
            kids = [(Kind.PRETERMINAL, PRE, [k]) if isinstance(k, str) else k for k in kids]
        return (Kind.NONTERMINAL, label, kids)

    if tokens[0][0] != "(":
        if len(tokens) == 1:
            return Tree.build(tokens[0][0])
        fail("tree must start with '('", tokens[0][1])
    spec = parse_node()
    if pos != len(tokens):
        tok, col = tokens[pos]
        fail(f"unbalanced parentheses: unexpected {tok!r} after tree end", col)
    # parsers often emit an unlabeled outer bracket: "( (S ...) )"
    while not isinstance(spec, str) and spec[1] == "" and len(spec[2]) == 1 and not isinstance(spec[2][0], str):
        spec = spec[2][0]
    return Tree.build(spec)


# ---------------------------------------------------------------------------
# preterminal formation


def _is_pos(tree: Tree, idx: int) -> bool:
    return tree[idx].kind is Kind.PRETERMINAL


def form_preterminals(tree: Tree, bpe=None) -> Tree:
    """Collapse word-level structure into ``pre`` phrases of subwords.

    * a node whose children are all POS nodes keeps its tag and gets one
      ``pre`` spanning all their words (``NP (DT The) (NN cat)`` becomes
      ``NP (pre _The _cat)``);
    * otherwise each POS child, and each bare word, becomes its own ``pre``;
    * a POS node or bare word at the root is kept as a nonterminal over a
      ``pre`` (``(X w)`` becomes ``(X (pre w))``).

    ``bpe`` is a `BpeModel`; ``None`` keeps words unsegmented.
    """

    def segment(words):
        return list(words) if bpe is None else bpe.apply(words)

    def pre(words):
        return (Kind.PRETERMINAL, PRE, segment(words))

    def visit(idx):
        node = tree[idx]
        kids = node.children
        if kids and all(_is_pos(tree, c) for c in kids):
            words = [w for c in kids for w in tree.leaves_of(c)]
            return (Kind.NONTERMINAL, node.label, [pre(words)])
        out = []
        for c in kids:
            child = tree[c]
            if child.kind is Kind.TERMINAL:
                out.append(pre([child.label]))
            elif child.kind is Kind.PRETERMINAL:
                out.append(pre([tree[t].label for t in child.children]))
            else:
                out.append(visit(c))
        return (Kind.NONTERMINAL, node.label, out)

    root = tree[tree.root]
    if root.kind is Kind.TERMINAL:
        return Tree.build((Kind.NONTERMINAL, NULL_TAG, [pre([root.label])]))
    if root.kind is Kind.PRETERMINAL:
        words = [tree[c].label for c in root.children]
        return Tree.build((Kind.NONTERMINAL, root.label, [pre(words)]))
    return Tree.build(visit(tree.root))


def wrap_root(tree: Tree) -> Tree:
    if tree[tree.root].label == ROOT:
        return tree
    return Tree.build((Kind.NONTERMINAL, ROOT, [tree.to_spec()]))


def is_formed(tree: Tree) -> bool:
    """True when `tree` already looks like a ROOT-wrapped target tree."""
    if tree[tree.root].label != ROOT or tree[tree.root].kind is not Kind.NONTERMINAL:
        return False
    try:
        tree.validate()
    except TreeError:
        return False
    return all(n.label == PRE for n in tree.nodes if n.kind is Kind.PRETERMINAL)


def prepare_target(tree: Tree, bpe=None) -> Tree:
    """Bring a parsed or built tree into formed, ROOT-wrapped shape."""
    if is_formed(tree):
        return tree
    if tree[tree.root].label == ROOT and tree[tree.root].kind is Kind.NONTERMINAL:
        kids = tree[tree.root].children
        if len(kids) == 1:
            inner = Tree.build(tree.to_spec(kids[0]))
            return wrap_root(form_preterminals(inner, bpe))
    return wrap_root(form_preterminals(tree, bpe))


# ---------------------------------------------------------------------------
# grammar


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple[str, ...]

    def __post_init__(self):
        if not self.rhs:
            raise GrammarError(f"rule for {self.lhs} has an empty right-hand side")

    def __str__(self) -> str:
        return f"{self.lhs} -> {' '.join(self.rhs)}"

    @classmethod
    def parse(cls, text: str) -> "Rule":
        lhs, sep, rhs = text.partition("->")
        if not sep:
            raise GrammarError(f"not a rule: {text!r}")
        return cls(lhs.strip(), tuple(rhs.split()))


class Grammar:
    """Rule vocabulary: id 0 is ``<eos>``, productions follow in first-seen order."""

    eos_id = 0

    def __init__(self, rules: Iterable[Rule] = (), start: str = ROOT):
        self.start = start
        self.rules: list[Rule | None] = [None]
        self._ids: dict[Rule, int] = {}
        self.lhs_index: dict[str, list[int]] = {}
        for r in rules:
            self.add(r)

    def add(self, rule: Rule) -> int:
        if rule in self._ids:
            return self._ids[rule]
        rid = len(self.rules)
        self.rules.append(rule)
        self._ids[rule] = rid
        self.lhs_index.setdefault(rule.lhs, []).append(rid)
        return rid

    def __len__(self) -> int:
        return len(self.rules)

    def __contains__(self, rule: Rule) -> bool:
        return rule in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Grammar) and self.rules == other.rules and self.start == other.start

    def id_of(self, rule: Rule) -> int:
        try:
            return self._ids[rule]
        except KeyError:
            raise GrammarError(f"rule not in grammar: {rule}") from None

    def rule(self, rid: int) -> Rule:
        if rid == self.eos_id:
            raise GrammarError("<eos> is not a production")
        return self.rules[rid]

    def symbol(self, rid: int) -> str:
        return EOS if rid == self.eos_id else str(self.rules[rid])

    def productions(self) -> list[Rule]:
        return self.rules[1:]

    def legal(self, open_symbol: str | None) -> list[int]:
        """Rule ids allowed when `open_symbol` is on top of the stack (None: empty)."""
        if open_symbol is None:
            return [self.eos_id]
        return self.lhs_index.get(open_symbol, [])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    def dumps(self) -> str:
        lines = [f"# start={self.start} eos={self.eos_id}"]
        lines += [EOS] + [str(r) for r in self.rules[1:]]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Grammar":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise GrammarError("grammar file is missing its header line")
        fields = dict(kv.split("=", 1) for kv in lines[0][1:].split())
        if int(fields.get("eos", 0)) != cls.eos_id:
            raise GrammarError("unsupported <eos> id in grammar header")
        body = lines[1:]
        if not body or body[0].strip() != EOS:
            raise GrammarError("line 0 of the grammar body must be <eos>")
        g = cls(start=fields.get("start", ROOT))
        for ln in body[1:]:
            if ln.strip():
                g.add(Rule.parse(ln))
        return g

    @classmethod
    def read(cls, path) -> "Grammar":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())


def _symbol(tree: Tree, idx: int) -> str:
    node = tree[idx]
    return PRE if node.kind is Kind.PRETERMINAL else node.label


def node_rule(tree: Tree, idx: int) -> Rule:
    return Rule(tree[idx].label, tuple(_symbol(tree, c) for c in tree[idx].children))


def extract_grammar(trees: Iterable[Tree], start: str = ROOT) -> Grammar:
    g = Grammar(start=start)
    for t in trees:
        for i in t.preorder():
            if t[i].kind is Kind.NONTERMINAL:
                g.add(node_rule(t, i))
    return g


# ---------------------------------------------------------------------------
# derivations


class StepKind(enum.Enum):
    RULE = "RULE"
    WORD = "WORD"


@dataclass(frozen=True)
class Step:
    """One decision on the generation timeline.

    ``value`` is a rule id for rule steps and a subword (or ``<eop>``) for
    word steps.  ``parent`` is the 1-based position of the rule step that
    introduced the node being expanded; 0 is the initial state.
    """

    kind: StepKind
    value: int | str
    parent: int

    @property
    def is_rule(self) -> bool:
        return self.kind is StepKind.RULE


@dataclass
class Derivation:
    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def words(self) -> list[str]:
        return [s.value for s in self.steps if not s.is_rule and s.value != EOP]

    def rule_steps(self) -> int:
        return sum(1 for s in self.steps if s.is_rule)

    def word_steps(self) -> int:
        return sum(1 for s in self.steps if not s.is_rule)

    def dump(self, grammar: Grammar) -> str:
        out = []
        for t, s in enumerate(self.steps, start=1):
            sym = grammar.symbol(s.value) if s.is_rule else s.value
            out.append(f"{t}\t{s.kind.value}\t{sym}\t{s.parent}")
        return "\n".join(out) + "\n"


def canonical_derivation(tree: Tree, grammar: Grammar) -> Derivation:
    steps: list[Step] = []
    # (node id, parent step); leftmost open symbol on top
    stack = [(tree.root, SENTINEL)]
    while stack:
        idx, parent = stack.pop()
        node = tree[idx]
        if node.kind is Kind.NONTERMINAL:
            rule = node_rule(tree, idx)
            if rule not in grammar:
                raise GrammarError(f"expansion missing from grammar: {rule}")
            steps.append(Step(StepKind.RULE, grammar.id_of(rule), parent))
            t = len(steps)
            stack.extend((c, t) for c in reversed(node.children))
        elif node.kind is Kind.PRETERMINAL:
            for c in node.children:
                steps.append(Step(StepKind.WORD, tree[c].label, parent))
            steps.append(Step(StepKind.WORD, EOP, parent))
        else:
            raise TreeError("terminal outside a preterminal")
    steps.append(Step(StepKind.RULE, grammar.eos_id, SENTINEL))
    return Derivation(steps)


class Automaton:
    """The open-symbol stack shared by replay, teacher forcing and search.

    Stack entries are ``(symbol, parent_step, depth)``; the top of the stack
    is the opening nonterminal.  Nodes are recorded as they are created so a
    (partial) tree can be read off at any point.
    """

    __slots__ = ("grammar", "stack", "t", "finished", "_nodes", "_open_node")

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.stack: list[tuple[str, int, int]] = [(grammar.start, SENTINEL, 0)]
        self.t = 0
        self.finished = False
        # node arena under construction: [kind, label, children, parent]
        self._nodes: list[list] = [[Kind.NONTERMINAL, grammar.start, [], None]]
        self._open_node: list[int] = [0]

    def copy(self) -> "Automaton":
        a = Automaton.__new__(Automaton)
        a.grammar = self.grammar
        a.stack = list(self.stack)
        a.t = self.t
        a.finished = self.finished
        a._nodes = [[k, l, list(c), p] for k, l, c, p in self._nodes]
        a._open_node = list(self._open_node)
        return a

    @property
    def top(self) -> str | None:
        return self.stack[-1][0] if self.stack else None

    @property
    def top_parent(self) -> int:
        return self.stack[-1][1] if self.stack else SENTINEL

    @property
    def top_depth(self) -> int:
        return self.stack[-1][2] if self.stack else 0

    def expects_word(self) -> bool:
        return self.top == PRE

    def apply_rule(self, rid: int) -> None:
        if self.finished:
            raise DerivationError("derivation already finished")
        if rid == self.grammar.eos_id:
            if self.stack:
                raise DerivationError(f"<eos> while {len(self.stack)} symbols are still open")
            self.t += 1
            self.finished = True
            return
        if not self.stack:
            raise DerivationError("rule applied after the stack emptied; expected <eos>")
        rule = self.grammar.rule(rid)
        sym, _, depth = self.stack[-1]
        if sym != rule.lhs:
            raise GrammarError(f"rule {rule} applied to open symbol {sym}")
        self.stack.pop()
        node = self._open_node.pop()
        self.t += 1
        kids = []
        for s in rule.rhs:
            kind = Kind.PRETERMINAL if s == PRE else Kind.NONTERMINAL
            kids.append(len(self._nodes))
            self._nodes.append([kind, s, [], node])
        self._nodes[node][2] = kids
        for s, k in zip(reversed(rule.rhs), reversed(kids)):
            self.stack.append((s, self.t, depth + 1))
            self._open_node.append(k)

    def emit_word(self, word: str) -> None:
        if self.top != PRE:
            raise DerivationError(f"word {word!r} emitted while open symbol is {self.top}")
        self.t += 1
        node = self._open_node[-1]
        if word == EOP:
            self.stack.pop()
            self._open_node.pop()
        else:
            self._nodes[node][2].append(len(self._nodes))
            self._nodes.append([Kind.TERMINAL, word, [], node])

    def step(self, s: Step) -> None:
        expected = SENTINEL if s.is_rule and s.value == self.grammar.eos_id else self.top_parent
        if s.parent != expected:
            raise DerivationError(f"step {self.t + 1}: parent {s.parent} != expected {expected}")
        if s.is_rule:
            self.apply_rule(s.value)
        else:
            self.emit_word(s.value)

    def tree(self) -> Tree:
        """The tree built so far; unexpanded symbols appear as childless nodes."""

        def visit(i):
            kind, label, kids, _ = self._nodes[i]
            if kind is Kind.TERMINAL:
                return label
            return (kind, label, [visit(k) for k in kids])

        return Tree.build(visit(0))


def replay_derivation(deriv: Derivation, grammar: Grammar) -> Tree:
    auto = Automaton(grammar)
    for s in deriv.steps:
        if auto.finished:
            raise DerivationError("steps after <eos>")
        auto.step(s)
    if not auto.finished:
        raise DerivationError("derivation does not end with <eos>")
    return auto.tree()


def stack_trace(deriv: Derivation, grammar: Grammar) -> list[tuple[str, ...]]:
    """Open-symbol stack (top last) before each step of `deriv`."""
    auto = Automaton(grammar)
    trace = []
    for s in deriv.steps:
        trace.append(tuple(sym for sym, _, _ in auto.stack))
        auto.step(s)
    return trace


# ---------------------------------------------------------------------------
# linearization


def is_bracket_token(token: str) -> bool:
    return token == ")" or (token.startswith("(") and len(token) > 1)


def linearize(tree: Tree) -> list[str]:
    out: list[str] = []

    def visit(i):
        node = tree[i]
        if node.kind is Kind.TERMINAL:
            out.append(node.label)
            return
        out.append("(" + node.label)
        for c in node.children:
            visit(c)
        out.append(")")

    visit(tree.root)
    return out


def delinearize(tokens: Sequence[str]) -> Tree:
    pos = 0

    def visit():
        nonlocal pos
        if pos >= len(tokens):
            raise TreeError("linearization ended early")
        tok = tokens[pos]
        pos += 1
        if not tok.startswith("(") or len(tok) == 1:
            return tok
        label = tok[1:]
        kids = []
        while True:
            if pos >= len(tokens):
                raise TreeError(f"unclosed bracket for {label}")
            if tokens[pos] == ")":
                pos += 1
                break
            kids.append(visit())
        if kids and all(isinstance(k, str) for k in kids):
            return (Kind.PRETERMINAL, label, kids)
        return (Kind.NONTERMINAL, label, kids)

    spec = visit()
    if pos != len(tokens):
        raise TreeError("trailing tokens after linearized tree")
    return Tree.build(spec)
