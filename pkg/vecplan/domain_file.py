"""
Reader and writer for the line-oriented ground domain format.

Grammar (one directive per line, '#' starts a comment)::

    domain <name>
    proposition <name>              # repeated; declaration order gives ids
    action <name>                   # repeated; declaration order gives ids
      pre <prop> <prop> ...         # optional, at most once per action
      add <prop> ...                # optional, at most once per action
      del <prop> ...                # optional, at most once per action
    end

Names are whitespace-free tokens. See docs/formats.md.
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

from vecplan.exceptions import DomainParseError
from vecplan.strips_core import GroundAction, GroundDomain, Proposition

SECTION_KEYWORDS = ("pre", "add", "del")


def format_domain(domain: GroundDomain) -> str:
    lines = [f"domain {domain.name}"]
    lines += [f"proposition {p.name}" for p in domain.propositions]
    for action in domain.actions:
        lines.append(f"action {action.name}")
        for keyword, members in (
            ("pre", action.precondition),
            ("add", action.add_effects),
            ("del", action.del_effects),
        ):
            if members:
                lines.append(f"  {keyword} " + " ".join(domain.state_names(members)))
        lines.append("end")
    return "\n".join(lines) + "\n"


def write_domain(path: Union[str, Path], domain: GroundDomain) -> None:
    Path(path).write_text(format_domain(domain), encoding="utf-8")


def _tokens(line: str):
    """Yield (column, token) pairs, 1-based columns."""
    col = 0
    for raw in line.split():
        col = line.index(raw, col)
        yield col + 1, raw
        col += len(raw)


def parse_domain(text: str, source: str = "<domain>") -> GroundDomain:
    name: Optional[str] = None
    props: List[Proposition] = []
    prop_index: Dict[str, int] = {}
    actions: List[GroundAction] = []
    action_names = set()

    current: Optional[dict] = None

    def fail(message: str, line: int, column: int = 1, token: Optional[str] = None):
        raise DomainParseError(message, line, column, token, source)

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        (kcol, keyword), args = toks[0], toks[1:]

        if keyword == "domain":
            if name is not None:
                fail("duplicate 'domain' directive", lineno, kcol, keyword)
            if len(args) != 1:
                fail("'domain' takes exactly one name", lineno, kcol)
            name = args[0][1]
            continue

        if name is None:
            fail("file must start with a 'domain' directive", lineno, kcol, keyword)

        if keyword == "proposition":
            if current is not None:
                fail("'proposition' inside an action block", lineno, kcol, keyword)
            if len(args) != 1:
                fail("'proposition' takes exactly one name", lineno, kcol)
            col, pname = args[0]
            if pname in prop_index:
                fail("duplicate proposition", lineno, col, pname)
            prop_index[pname] = len(props)
            props.append(Proposition(len(props), pname))

        elif keyword == "action":
            if current is not None:
                fail("nested 'action' (missing 'end')", lineno, kcol, keyword)
            if len(args) != 1:
                fail("'action' takes exactly one name", lineno, kcol)
            col, aname = args[0]
            if aname in action_names:
                fail("duplicate action", lineno, col, aname)
            action_names.add(aname)
            current = {"name": aname, "line": lineno, "pre": None, "add": None, "del": None}

        elif keyword in SECTION_KEYWORDS:
            if current is None:
                fail(f"'{keyword}' outside an action block", lineno, kcol, keyword)
            if current[keyword] is not None:
                fail(f"repeated '{keyword}' in action '{current['name']}'", lineno, kcol, keyword)
            members = set()
            for col, pname in args:
                if pname not in prop_index:
                    fail("undeclared proposition", lineno, col, pname)
                members.add(prop_index[pname])
            current[keyword] = frozenset(members)

        elif keyword == "end":
            if current is None:
                fail("'end' without an open action", lineno, kcol, keyword)
            pre = current["pre"] or frozenset()
            add = current["add"] or frozenset()
            delete = current["del"] or frozenset()
            if add & delete:
                clash = sorted(props[i].name for i in add & delete)[0]
                fail("proposition both added and deleted", current["line"], 1, clash)
            actions.append(GroundAction(len(actions), current["name"], pre, add, delete))
            current = None

        else:
            fail("unknown directive", lineno, kcol, keyword)

    if name is None:
        fail("empty domain file", 1)
    if current is not None:
        fail(f"action '{current['name']}' is missing 'end'", current["line"])

    return GroundDomain(name, tuple(props), tuple(actions))


def read_domain(path: Union[str, Path]) -> GroundDomain:
    path = Path(path)
    return parse_domain(path.read_text(encoding="utf-8"), source=str(path))
