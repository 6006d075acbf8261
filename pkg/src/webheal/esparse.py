"""Position-annotated ECMAScript parsing for statement-targeted rewriting.

A hand-written tokenizer and recursive-descent parser. The tree is
deliberately loose: it records statement boundaries, expression shapes,
and exact character spans, which is what positional source splicing
needs. It does not enforce every static-semantics rule and it never
generates code.

Coverage: ES5 plus the ES2015+ constructs common in deployed scripts
(let/const, arrow functions, classes, template literals, spread/rest,
destructuring targets, for-of, optional chaining, exponentiation,
async/await, generators, import/export). Template literals are scanned
as atomic tokens, including nested substitutions; a regex literal
containing an unbalanced brace inside a substitution is not supported.
"""

from __future__ import annotations

from typing import Any, Iterator, Optional


class ParseError(SyntaxError):
    """Source text is not a parseable script."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


LINE_TERMINATORS = "\n\r  "

# Longest first so that startswith matching is unambiguous.
PUNCTUATORS = [
    ">>>=",
    "===", "!==", "**=", "...", "<<=", ">>=", ">>>", "&&=", "||=", "??=",
    "=>", "==", "!=", "<=", ">=", "&&", "||", "??", "?.", "++", "--",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "**",
    "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/",
    "%", "&", "|", "^", "!", "~", "?", ":", "=", ".", "@",
]

KEYWORDS = {
    "break", "case", "catch", "class", "const", "continue", "debugger",
    "default", "delete", "do", "else", "export", "extends", "finally",
    "for", "function", "if", "import", "in", "instanceof", "new",
    "return", "super", "switch", "this", "throw", "try", "typeof",
    "var", "void", "while", "with",
}

# Words that end an expression, for the scan-ahead lexer heuristic only;
# the real parse always passes an explicit regex_ok flag.
EXPR_END_WORDS = {"this", "super", "true", "false", "null"}

ASSIGN_OPS = {
    "=", "+=", "-=", "*=", "/=", "%=", "<<=", ">>=", ">>>=", "&=", "|=",
    "^=", "**=", "&&=", "||=", "??=",
}

# Binary operator precedence; higher binds tighter.
BINARY_PRECEDENCE = {
    "??": 1,
    "||": 2,
    "&&": 3,
    "|": 4,
    "^": 5,
    "&": 6,
    "==": 7, "!=": 7, "===": 7, "!==": 7,
    "<": 8, ">": 8, "<=": 8, ">=": 8, "instanceof": 8, "in": 8,
    "<<": 9, ">>": 9, ">>>": 9,
    "+": 10, "-": 10,
    "*": 11, "/": 11, "%": 11,
    "**": 12,
}

STATEMENT_KINDS = {
    "BlockStatement", "VariableDeclaration", "EmptyStatement",
    "ExpressionStatement", "IfStatement", "ForStatement", "ForInStatement",
    "ForOfStatement", "WhileStatement", "DoWhileStatement",
    "ReturnStatement", "BreakStatement", "ContinueStatement",
    "ThrowStatement", "TryStatement", "SwitchStatement",
    "LabeledStatement", "WithStatement", "DebuggerStatement",
    "FunctionDeclaration", "ClassDeclaration", "ImportDeclaration",
    "ExportNamedDeclaration", "ExportDefaultDeclaration",
    "ExportAllDeclaration",
}

# Wrapping one of these in a conditional changes name binding, not just
# control flow.
DECLARATION_KINDS = {
    "VariableDeclaration", "FunctionDeclaration", "ClassDeclaration",
    "ImportDeclaration", "ExportNamedDeclaration",
    "ExportDefaultDeclaration", "ExportAllDeclaration",
}


class Token:
    __slots__ = ("kind", "value", "start", "end", "line", "col", "nl_before")

    def __init__(self, kind: str, value: str, start: int, end: int,
                 line: int, col: int, nl_before: bool):
        self.kind = kind  # name | num | str | template | regex | punct | eof
        self.value = value
        self.start = start
        self.end = end
        self.line = line
        self.col = col
        self.nl_before = nl_before

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Token({self.kind} {self.value!r} @{self.line}:{self.col})"


class Node:
    """Loose syntax-tree node: a kind, a source span, and named fields."""

    __slots__ = ("kind", "start", "end", "fields", "parent")

    def __init__(self, kind: str, start: int, end: int, **fields: Any):
        self.kind = kind
        self.start = start
        self.end = end
        self.fields = fields
        self.parent: Optional[Node] = None

    def __getitem__(self, name: str) -> Any:
        return self.fields.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self.fields

    def children(self) -> Iterator["Node"]:
        for value in self.fields.values():
            if isinstance(value, Node):
                yield value
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Node):
                        yield item

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Node({self.kind} [{self.start}:{self.end}])"


def iter_nodes(root: Node) -> Iterator[Node]:
    """Pre-order walk."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(list(node.children())))


class SourceIndex:
    """Bidirectional (offset) <-> (1-based line, 0-based column) mapping."""

    def __init__(self, source: str):
        self.source = source
        starts = [0]
        i = 0
        n = len(source)
        while i < n:
            ch = source[i]
            if ch == "\r":
                if i + 1 < n and source[i + 1] == "\n":
                    i += 1
                starts.append(i + 1)
            elif ch in "\n  ":
                starts.append(i + 1)
            i += 1
        self.line_starts = starts

    def line_col(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.line_starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self.line_starts[lo]

    def offset(self, line: int, col: int) -> int:
        if line < 1 or line > len(self.line_starts):
            raise ValueError(f"line {line} out of range")
        return self.line_starts[line - 1] + col

    def line_count(self) -> int:
        return len(self.line_starts)


def _is_name_start(ch: str) -> bool:
    return ch.isalpha() or ch in "_$#" or ord(ch) > 127


def _is_name_part(ch: str) -> bool:
    return ch.isalnum() or ch in "_$" or ord(ch) > 127


class Lexer:
    def __init__(self, source: str):
        self.src = source
        self.n = len(source)
        self.index = SourceIndex(source)

    def _skip_blank(self, pos: int) -> tuple[int, bool]:
        src, n = self.src, self.n
        nl = False
        while pos < n:
            ch = src[pos]
            if ch in LINE_TERMINATORS:
                nl = True
                pos += 1
            elif ch.isspace() or ch == "﻿":
                pos += 1
            elif ch == "/" and pos + 1 < n and src[pos + 1] == "/":
                while pos < n and src[pos] not in LINE_TERMINATORS:
                    pos += 1
            elif ch == "/" and pos + 1 < n and src[pos + 1] == "*":
                close = src.find("*/", pos + 2)
                if close == -1:
                    self._fail("unterminated comment", pos)
                if any(t in src[pos:close] for t in LINE_TERMINATORS):
                    nl = True
                pos = close + 2
            elif ch == "#" and pos == 0 and src[1:2] == "!":
                while pos < n and src[pos] not in LINE_TERMINATORS:
                    pos += 1
            else:
                break
        return pos, nl

    def _fail(self, message: str, pos: int) -> None:
        line, col = self.index.line_col(min(pos, self.n))
        raise ParseError(message, line, col)

    def lex(self, pos: int, regex_ok: bool) -> Token:
        pos, nl = self._skip_blank(pos)
        src, n = self.src, self.n
        if pos >= n:
            line, col = self.index.line_col(n)
            return Token("eof", "", n, n, line, col, nl)
        line, col = self.index.line_col(pos)
        ch = src[pos]

        if _is_name_start(ch):
            end = pos + 1
            while end < n and _is_name_part(src[end]):
                end += 1
            return Token("name", src[pos:end], pos, end, line, col, nl)

        if ch.isdigit() or (ch == "." and pos + 1 < n and src[pos + 1].isdigit()):
            end = self._scan_number(pos)
            return Token("num", src[pos:end], pos, end, line, col, nl)

        if ch in "'\"":
            end = self._scan_string(pos)
            return Token("str", src[pos:end], pos, end, line, col, nl)

        if ch == "`":
            end = self._scan_template(pos)
            return Token("template", src[pos:end], pos, end, line, col, nl)

        if ch == "/" and regex_ok:
            end = self._scan_regex(pos)
            return Token("regex", src[pos:end], pos, end, line, col, nl)

        for punct in PUNCTUATORS:
            if src.startswith(punct, pos):
                # `?.` directly before a digit is a conditional, not chaining.
                if punct == "?." and pos + 2 < n and src[pos + 2].isdigit():
                    continue
                return Token("punct", punct, pos, pos + len(punct), line, col, nl)

        self._fail(f"unexpected character {ch!r}", pos)
        raise AssertionError("unreachable")

    def _scan_number(self, pos: int) -> int:
        src, n = self.src, self.n
        end = pos
        if src[pos] == "0" and pos + 1 < n and src[pos + 1] in "xXoObB":
            end = pos + 2
            while end < n and (src[end].isalnum() or src[end] == "_"):
                end += 1
            return end
        while end < n and (src[end].isdigit() or src[end] == "_"):
            end += 1
        if end < n and src[end] == ".":
            end += 1
            while end < n and (src[end].isdigit() or src[end] == "_"):
                end += 1
        if end < n and src[end] in "eE":
            mark = end + 1
            if mark < n and src[mark] in "+-":
                mark += 1
            if mark < n and src[mark].isdigit():
                end = mark
                while end < n and (src[end].isdigit() or src[end] == "_"):
                    end += 1
        if end < n and src[end] == "n":
            end += 1
        return end

    def _scan_string(self, pos: int) -> int:
        src, n = self.src, self.n
        quote = src[pos]
        i = pos + 1
        while i < n:
            ch = src[i]
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                return i + 1
            if ch in "\n\r":
                self._fail("unterminated string literal", pos)
            i += 1
        self._fail("unterminated string literal", pos)
        raise AssertionError("unreachable")

    def _scan_template(self, pos: int) -> int:
        # Whole template, nested substitutions included, as one span.
        src, n = self.src, self.n
        i = pos + 1
        while i < n:
            ch = src[i]
            if ch == "\\":
                i += 2
                continue
            if ch == "`":
                return i + 1
            if ch == "$" and i + 1 < n and src[i + 1] == "{":
                i = self._scan_substitution(i + 2)
                continue
            i += 1
        self._fail("unterminated template literal", pos)
        raise AssertionError("unreachable")

    def _scan_substitution(self, pos: int) -> int:
        # Balance braces while respecting strings, comments, and nested
        # templates that may appear inside ${ ... }.
        src, n = self.src, self.n
        depth = 1
        i = pos
        while i < n:
            ch = src[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return i + 1
            elif ch in "'\"":
                i = self._scan_string(i) - 1
            elif ch == "`":
                i = self._scan_template(i) - 1
            elif ch == "/" and i + 1 < n and src[i + 1] == "/":
                while i < n and src[i] not in LINE_TERMINATORS:
                    i += 1
                continue
            elif ch == "/" and i + 1 < n and src[i + 1] == "*":
                close = src.find("*/", i + 2)
                if close == -1:
                    self._fail("unterminated comment", i)
                i = close + 1
            i += 1
        self._fail("unterminated template substitution", pos)
        raise AssertionError("unreachable")

    def _scan_regex(self, pos: int) -> int:
        src, n = self.src, self.n
        i = pos + 1
        in_class = False
        while i < n:
            ch = src[i]
            if ch == "\\":
                i += 2
                continue
            if ch in "\n\r  ":
                self._fail("unterminated regular expression", pos)
            if in_class:
                if ch == "]":
                    in_class = False
            elif ch == "[":
                in_class = True
            elif ch == "/":
                i += 1
                while i < n and _is_name_part(src[i]):
                    i += 1
                return i
            i += 1
        self._fail("unterminated regular expression", pos)
        raise AssertionError("unreachable")


class TokenCursor:
    """Lazy token stream with parser-driven regex/division selection."""

    def __init__(self, source: str):
        self.lexer = Lexer(source)
        self.pos = 0
        self.prev_end = 0
        self._cache: Optional[tuple[int, bool, Token]] = None

    def peek(self, regex_ok: bool = False) -> Token:
        cached = self._cache
        if cached and cached[0] == self.pos and cached[1] == regex_ok:
            return cached[2]
        token = self.lexer.lex(self.pos, regex_ok)
        self._cache = (self.pos, regex_ok, token)
        return token

    def next(self, regex_ok: bool = False) -> Token:
        token = self.peek(regex_ok)
        if token.kind != "eof":
            self.pos = token.end
            self.prev_end = token.end
            self._cache = None
        return token

    def save(self) -> tuple[int, int]:
        return (self.pos, self.prev_end)

    def restore(self, state: tuple[int, int]) -> None:
        self.pos, self.prev_end = state
        self._cache = None


class Parser:
    def __init__(self, source: str):
        self.source = source
        self.cur = TokenCursor(source)
        self.index = self.cur.lexer.index
        # await/yield are operators only inside async/generator functions;
        # elsewhere they are ordinary identifiers (sloppy-mode web code).
        self._async_stack = [False]
        self._generator_stack = [False]

    # -- helpers ---------------------------------------------------------

    def _fail(self, message: str, token: Token) -> None:
        raise ParseError(message, token.line, token.col)

    def _expect(self, value: str) -> Token:
        token = self.cur.next()
        if token.kind not in ("punct", "name") or token.value != value:
            self._fail(f"expected {value!r}, found {token.value or 'end of input'!r}", token)
        return token

    def _at(self, value: str) -> bool:
        token = self.cur.peek()
        return token.kind in ("punct", "name") and token.value == value

    def _eat(self, value: str) -> Optional[Token]:
        if self._at(value):
            return self.cur.next()
        return None

    def _semicolon(self) -> int:
        """Consume an explicit or inserted semicolon; return statement end."""
        token = self.cur.peek()
        if token.kind == "punct" and token.value == ";":
            self.cur.next()
            return token.end
        if token.kind == "eof" or (token.kind == "punct" and token.value == "}"):
            return self.cur.prev_end
        if token.nl_before:
            return self.cur.prev_end
        self._fail(f"expected ';', found {token.value!r}", token)
        raise AssertionError("unreachable")

    # -- program ---------------------------------------------------------

    def parse_program(self) -> Node:
        body = []
        while self.cur.peek().kind != "eof":
            body.append(self.parse_statement())
        program = Node("Program", 0, len(self.source), body=body)
        for node in iter_nodes(program):
            for child in node.children():
                child.parent = node
        return program

    # -- statements ------------------------------------------------------

    def parse_statement(self) -> Node:
        token = self.cur.peek()
        if token.kind == "punct":
            if token.value == "{":
                return self.parse_block()
            if token.value == ";":
                self.cur.next()
                return Node("EmptyStatement", token.start, token.end)
        if token.kind == "name":
            word = token.value
            if word in ("var", "const"):
                return self.parse_var_declaration()
            if word == "let" and self._starts_binding_after_let():
                return self.parse_var_declaration()
            if word == "function":
                return self.parse_function(declaration=True)
            if word == "async" and self._peek2_is("function"):
                return self.parse_function(declaration=True)
            if word == "class":
                return self.parse_class(declaration=True)
            if word == "if":
                return self.parse_if()
            if word == "for":
                return self.parse_for()
            if word == "while":
                return self.parse_while()
            if word == "do":
                return self.parse_do_while()
            if word == "return":
                return self.parse_return()
            if word in ("break", "continue"):
                return self.parse_break_continue()
            if word == "throw":
                return self.parse_throw()
            if word == "try":
                return self.parse_try()
            if word == "switch":
                return self.parse_switch()
            if word == "with":
                return self.parse_with()
            if word == "debugger":
                self.cur.next()
                end = self._semicolon()
                return Node("DebuggerStatement", token.start, end)
            if word == "import" and not self._peek2_is_any("(", "."):
                return self.parse_import()
            if word == "export":
                return self.parse_export()
            if word not in KEYWORDS and self._peek2_is(":"):
                return self.parse_labeled()
        expr = self.parse_expression()
        end = self._semicolon()
        return Node("ExpressionStatement", expr.start, max(end, expr.end), expression=expr)

    def _peek2_is(self, value: str) -> bool:
        state = self.cur.save()
        try:
            self.cur.next()
            token = self.cur.peek()
            return token.kind in ("punct", "name") and token.value == value
        finally:
            self.cur.restore(state)

    def _peek2_is_any(self, *values: str) -> bool:
        state = self.cur.save()
        try:
            self.cur.next()
            token = self.cur.peek()
            return token.kind in ("punct", "name") and token.value in values
        finally:
            self.cur.restore(state)

    def _starts_binding_after_let(self) -> bool:
        state = self.cur.save()
        try:
            self.cur.next()
            token = self.cur.peek()
            if token.kind == "name" and token.value not in KEYWORDS:
                return True
            return token.kind == "punct" and token.value in ("[", "{")
        finally:
            self.cur.restore(state)

    def parse_block(self) -> Node:
        start = self._expect("{").start
        body = []
        while not self._at("}"):
            if self.cur.peek().kind == "eof":
                self._fail("unterminated block", self.cur.peek())
            body.append(self.parse_statement())
        end = self._expect("}").end
        return Node("BlockStatement", start, end, body=body)

    def parse_var_declaration(self, *, for_head: bool = False) -> Node:
        kw = self.cur.next()
        declarations = []
        while True:
            target = self.parse_binding_target()
            init = None
            if self._eat("="):
                init = self.parse_assignment(no_in=for_head)
            end = init.end if init else target.end
            declarations.append(Node("VariableDeclarator", target.start, end, id=target, init=init))
            if not self._eat(","):
                break
        if for_head:
            end = declarations[-1].end
        else:
            end = self._semicolon()
        return Node(
            "VariableDeclaration",
            kw.start,
            max(end, declarations[-1].end),
            declaration_kind=kw.value,
            declarations=declarations,
        )

    def parse_binding_target(self) -> Node:
        token = self.cur.peek()
        if token.kind == "punct" and token.value in ("[", "{"):
            # Destructuring target, parsed with the literal grammar.
            return self.parse_primary()
        if token.kind != "name" or token.value in KEYWORDS:
            self._fail("expected binding identifier", token)
        self.cur.next()
        return Node("Identifier", token.start, token.end, name=token.value)

    def parse_if(self) -> Node:
        start = self.cur.next().start
        self._expect("(")
        test = self.parse_expression()
        self._expect(")")
        consequent = self.parse_statement()
        alternate = None
        if self._at("else"):
            self.cur.next()
            alternate = self.parse_statement()
        end = alternate.end if alternate else consequent.end
        return Node("IfStatement", start, end, test=test, consequent=consequent, alternate=alternate)

    def parse_for(self) -> Node:
        start = self.cur.next().start
        self._eat("await")
        self._expect("(")
        init: Optional[Node] = None
        token = self.cur.peek()
        if token.kind == "punct" and token.value == ";":
            self.cur.next()
        else:
            if token.kind == "name" and (
                token.value in ("var", "const")
                or (token.value == "let" and self._starts_binding_after_let())
            ):
                init = self.parse_var_declaration(for_head=True)
            else:
                init = self.parse_expression(no_in=True)
            if self._at("in") or self._at("of"):
                op = self.cur.next().value
                right = self.parse_assignment() if op == "of" else self.parse_expression()
                self._expect(")")
                body = self.parse_statement()
                kind = "ForInStatement" if op == "in" else "ForOfStatement"
                return Node(kind, start, body.end, left=init, right=right, body=body)
            self._expect(";")
        test = None if self._at(";") else self.parse_expression()
        self._expect(";")
        update = None if self._at(")") else self.parse_expression()
        self._expect(")")
        body = self.parse_statement()
        return Node("ForStatement", start, body.end, init=init, test=test, update=update, body=body)

    def parse_while(self) -> Node:
        start = self.cur.next().start
        self._expect("(")
        test = self.parse_expression()
        self._expect(")")
        body = self.parse_statement()
        return Node("WhileStatement", start, body.end, test=test, body=body)

    def parse_do_while(self) -> Node:
        start = self.cur.next().start
        body = self.parse_statement()
        self._expect("while")
        self._expect("(")
        test = self.parse_expression()
        close = self._expect(")")
        end = close.end
        token = self.cur.peek()
        if token.kind == "punct" and token.value == ";":
            end = self.cur.next().end
        return Node("DoWhileStatement", start, end, body=body, test=test)

    def parse_return(self) -> Node:
        kw = self.cur.next()
        argument = None
        token = self.cur.peek()
        if not (
            token.kind == "eof"
            or token.nl_before
            or (token.kind == "punct" and token.value in (";", "}"))
        ):
            argument = self.parse_expression()
        end = self._semicolon()
        return Node("ReturnStatement", kw.start, max(end, kw.end), argument=argument)

    def parse_break_continue(self) -> Node:
        kw = self.cur.next()
        label = None
        token = self.cur.peek()
        if token.kind == "name" and token.value not in KEYWORDS and not token.nl_before:
            self.cur.next()
            label = Node("Identifier", token.start, token.end, name=token.value)
        end = self._semicolon()
        kind = "BreakStatement" if kw.value == "break" else "ContinueStatement"
        return Node(kind, kw.start, max(end, kw.end), label=label)

    def parse_throw(self) -> Node:
        kw = self.cur.next()
        token = self.cur.peek()
        if token.nl_before:
            self._fail("newline after throw", token)
        argument = self.parse_expression()
        end = self._semicolon()
        return Node("ThrowStatement", kw.start, max(end, argument.end), argument=argument)

    def parse_try(self) -> Node:
        start = self.cur.next().start
        block = self.parse_block()
        handler = None
        finalizer = None
        end = block.end
        if self._at("catch"):
            cstart = self.cur.next().start
            param = None
            if self._eat("("):
                param = self.parse_binding_target()
                self._expect(")")
            cbody = self.parse_block()
            handler = Node("CatchClause", cstart, cbody.end, param=param, body=cbody)
            end = cbody.end
        if self._at("finally"):
            self.cur.next()
            finalizer = self.parse_block()
            end = finalizer.end
        if handler is None and finalizer is None:
            self._fail("try without catch or finally", self.cur.peek())
        return Node("TryStatement", start, end, block=block, handler=handler, finalizer=finalizer)

    def parse_switch(self) -> Node:
        start = self.cur.next().start
        self._expect("(")
        discriminant = self.parse_expression()
        self._expect(")")
        self._expect("{")
        cases = []
        while not self._at("}"):
            token = self.cur.peek()
            if token.kind == "name" and token.value == "case":
                cstart = self.cur.next().start
                test = self.parse_expression()
            elif token.kind == "name" and token.value == "default":
                cstart = self.cur.next().start
                test = None
            else:
                self._fail("expected case or default", token)
                raise AssertionError("unreachable")
            self._expect(":")
            consequent = []
            while not (
                self._at("case") or self._at("default") or self._at("}")
            ):
                if self.cur.peek().kind == "eof":
                    self._fail("unterminated switch", self.cur.peek())
                consequent.append(self.parse_statement())
            cend = consequent[-1].end if consequent else self.cur.prev_end
            cases.append(Node("SwitchCase", cstart, cend, test=test, consequent=consequent))
        end = self._expect("}").end
        return Node("SwitchStatement", start, end, discriminant=discriminant, cases=cases)

    def parse_labeled(self) -> Node:
        token = self.cur.next()
        label = Node("Identifier", token.start, token.end, name=token.value)
        self._expect(":")
        body = self.parse_statement()
        return Node("LabeledStatement", token.start, body.end, label=label, body=body)

    def parse_with(self) -> Node:
        start = self.cur.next().start
        self._expect("(")
        obj = self.parse_expression()
        self._expect(")")
        body = self.parse_statement()
        return Node("WithStatement", start, body.end, object=obj, body=body)

    def parse_import(self) -> Node:
        start = self.cur.next().start
        token = self.cur.peek()
        specifiers = []
        source = None
        if token.kind == "str":
            source = self._literal(self.cur.next())
        else:
            if token.kind == "name" and token.value not in KEYWORDS:
                self.cur.next()
                specifiers.append(Node("Identifier", token.start, token.end, name=token.value))
                self._eat(",")
            if self._at("*"):
                self.cur.next()
                self._expect("as")
                specifiers.append(self.parse_binding_target())
            elif self._at("{"):
                self.cur.next()
                while not self._at("}"):
                    self.cur.next()  # imported name, `as`, alias, or comma
                    if self.cur.peek().kind == "eof":
                        self._fail("unterminated import clause", self.cur.peek())
                self._expect("}")
            self._expect("from")
            tok = self.cur.next()
            if tok.kind != "str":
                self._fail("expected module string", tok)
            source = self._literal(tok)
        end = self._semicolon()
        return Node(
            "ImportDeclaration", start, max(end, source.end),
            specifiers=specifiers, source=source,
        )

    def parse_export(self) -> Node:
        start = self.cur.next().start
        if self._at("default"):
            self.cur.next()
            token = self.cur.peek()
            if token.kind == "name" and token.value in ("function", "class"):
                decl = self.parse_statement()
            elif token.kind == "name" and token.value == "async" and self._peek2_is("function"):
                decl = self.parse_statement()
            else:
                decl = self.parse_assignment()
                self._semicolon()
            return Node("ExportDefaultDeclaration", start, decl.end, declaration=decl)
        if self._at("*"):
            self.cur.next()
            if self._eat("as"):
                self.cur.next()
            self._expect("from")
            tok = self.cur.next()
            if tok.kind != "str":
                self._fail("expected module string", tok)
            end = self._semicolon()
            return Node("ExportAllDeclaration", start, max(end, tok.end), source=self._literal(tok))
        if self._at("{"):
            self.cur.next()
            while not self._at("}"):
                self.cur.next()
                if self.cur.peek().kind == "eof":
                    self._fail("unterminated export clause", self.cur.peek())
            end = self._expect("}").end
            source = None
            if self._eat("from"):
                tok = self.cur.next()
                if tok.kind != "str":
                    self._fail("expected module string", tok)
                source = self._literal(tok)
                end = tok.end
            send = self._semicolon()
            return Node("ExportNamedDeclaration", start, max(send, end), declaration=None, source=source)
        decl = self.parse_statement()
        return Node("ExportNamedDeclaration", start, decl.end, declaration=decl, source=None)

    # -- functions and classes -------------------------------------------

    def parse_function(self, *, declaration: bool) -> Node:
        start_token = self.cur.peek()
        is_async = False
        if start_token.kind == "name" and start_token.value == "async":
            self.cur.next()
            is_async = True
        fn_kw = self._expect("function")
        start = start_token.start if is_async else fn_kw.start
        generator = bool(self._eat("*"))
        name = None
        token = self.cur.peek()
        if token.kind == "name" and token.value not in KEYWORDS:
            self.cur.next()
            name = Node("Identifier", token.start, token.end, name=token.value)
        elif declaration:
            self._fail("function declaration requires a name", token)
        self._async_stack.append(is_async)
        self._generator_stack.append(generator)
        try:
            params = self.parse_params()
            body = self.parse_block()
        finally:
            self._async_stack.pop()
            self._generator_stack.pop()
        kind = "FunctionDeclaration" if declaration else "FunctionExpression"
        return Node(
            kind, start, body.end,
            id=name, params=params, body=body,
            is_async=is_async, generator=generator,
        )

    def parse_params(self) -> list[Node]:
        self._expect("(")
        params = []
        while not self._at(")"):
            if self._at("..."):
                dots = self.cur.next()
                arg = self.parse_assignment()
                params.append(Node("RestElement", dots.start, arg.end, argument=arg))
            else:
                params.append(self.parse_assignment())
            if not self._eat(","):
                break
        self._expect(")")
        return params

    def parse_class(self, *, declaration: bool) -> Node:
        start = self.cur.next().start
        name = None
        token = self.cur.peek()
        if token.kind == "name" and token.value not in KEYWORDS:
            self.cur.next()
            name = Node("Identifier", token.start, token.end, name=token.value)
        elif declaration:
            self._fail("class declaration requires a name", token)
        superclass = None
        if self._eat("extends"):
            superclass = self.parse_unary_chain()
        bstart = self._expect("{").start
        elements = []
        while not self._at("}"):
            if self._eat(";"):
                continue
            if self.cur.peek().kind == "eof":
                self._fail("unterminated class body", self.cur.peek())
            elements.append(self.parse_class_element())
        bend = self._expect("}").end
        body = Node("ClassBody", bstart, bend, elements=elements)
        kind = "ClassDeclaration" if declaration else "ClassExpression"
        return Node(kind, start, bend, id=name, superclass=superclass, body=body)

    def parse_class_element(self) -> Node:
        start_token = self.cur.peek()
        is_static = False
        if start_token.kind == "name" and start_token.value == "static" and not self._peek2_is_any("(", "="):
            self.cur.next()
            is_static = True
        modifier = None
        token = self.cur.peek()
        if (
            token.kind == "name"
            and token.value in ("get", "set", "async")
            and not self._peek2_is_any("(", "=", ";", "}")
        ):
            self.cur.next()
            modifier = token.value
        generator = bool(self._eat("*"))
        key = self.parse_property_key()
        if self._at("("):
            self._async_stack.append(modifier == "async")
            self._generator_stack.append(generator)
            try:
                params = self.parse_params()
                body = self.parse_block()
            finally:
                self._async_stack.pop()
                self._generator_stack.pop()
            value = Node(
                "FunctionExpression", key.start, body.end,
                id=None, params=params, body=body,
                is_async=modifier == "async", generator=generator,
            )
            return Node(
                "MethodDefinition", start_token.start, body.end,
                key=key, value=value, static=is_static, accessor=modifier,
            )
        value = None
        if self._eat("="):
            value = self.parse_assignment()
        end = self._semicolon()
        return Node(
            "PropertyDefinition", start_token.start,
            max(end, value.end if value else key.end),
            key=key, value=value, static=is_static,
        )

    def parse_property_key(self) -> Node:
        token = self.cur.peek()
        if token.kind == "punct" and token.value == "[":
            start = self.cur.next().start
            expr = self.parse_assignment()
            end = self._expect("]").end
            return Node("ComputedKey", start, end, expression=expr)
        if token.kind in ("str", "num"):
            self.cur.next()
            return self._literal(token)
        if token.kind == "name":
            self.cur.next()
            return Node("Identifier", token.start, token.end, name=token.value)
        self._fail("expected property name", token)
        raise AssertionError("unreachable")

    # -- expressions -----------------------------------------------------

    def parse_expression(self, *, no_in: bool = False) -> Node:
        expr = self.parse_assignment(no_in=no_in)
        if self._at(","):
            expressions = [expr]
            while self._eat(","):
                expressions.append(self.parse_assignment(no_in=no_in))
            return Node(
                "SequenceExpression", expressions[0].start, expressions[-1].end,
                expressions=expressions,
            )
        return expr

    def parse_assignment(self, *, no_in: bool = False) -> Node:
        arrow = self._try_arrow_function()
        if arrow is not None:
            return arrow
        token = self.cur.peek()
        if token.kind == "name" and token.value == "yield" and self._generator_stack[-1]:
            return self.parse_yield(no_in=no_in)
        left = self.parse_conditional(no_in=no_in)
        op_token = self.cur.peek()
        if op_token.kind == "punct" and op_token.value in ASSIGN_OPS:
            self.cur.next()
            right = self.parse_assignment(no_in=no_in)
            return Node(
                "AssignmentExpression", left.start, right.end,
                operator=op_token.value, left=left, right=right,
            )
        return left

    def parse_yield(self, *, no_in: bool) -> Node:
        kw = self.cur.next()
        delegate = bool(self._eat("*"))
        token = self.cur.peek()
        argument = None
        if not (
            token.kind == "eof"
            or token.nl_before
            or (token.kind == "punct" and token.value in (")", "]", "}", ",", ";", ":"))
        ):
            argument = self.parse_assignment(no_in=no_in)
        end = argument.end if argument else kw.end
        return Node("YieldExpression", kw.start, end, argument=argument, delegate=delegate)

    def _try_arrow_function(self) -> Optional[Node]:
        token = self.cur.peek()
        if token.kind == "name" and token.value == "async" and not self._peek_nl_after():
            state = self.cur.save()
            self.cur.next()
            inner = self._try_arrow_function_plain(is_async=True, start=token.start)
            if inner is not None:
                return inner
            self.cur.restore(state)
            return None
        return self._try_arrow_function_plain(is_async=False, start=token.start)

    def _peek_nl_after(self) -> bool:
        state = self.cur.save()
        try:
            self.cur.next()
            return self.cur.peek().nl_before
        finally:
            self.cur.restore(state)

    def _try_arrow_function_plain(self, *, is_async: bool, start: int) -> Optional[Node]:
        token = self.cur.peek()
        if token.kind == "name" and token.value not in KEYWORDS and token.value != "async":
            if self._peek2_is("=>"):
                self.cur.next()
                param = Node("Identifier", token.start, token.end, name=token.value)
                return self._finish_arrow([param], start, is_async)
            return None
        if token.kind == "punct" and token.value == "(":
            if not self._paren_group_precedes_arrow():
                return None
            self.cur.next()
            params = []
            while not self._at(")"):
                if self._at("..."):
                    dots = self.cur.next()
                    arg = self.parse_assignment()
                    params.append(Node("RestElement", dots.start, arg.end, argument=arg))
                else:
                    params.append(self.parse_assignment())
                if not self._eat(","):
                    break
            self._expect(")")
            return self._finish_arrow(params, start, is_async)
        return None

    def _finish_arrow(self, params: list[Node], start: int, is_async: bool) -> Node:
        self._expect("=>")
        self._async_stack.append(is_async)
        self._generator_stack.append(False)
        try:
            if self._at("{"):
                body = self.parse_block()
            else:
                body = self.parse_assignment()
        finally:
            self._async_stack.pop()
            self._generator_stack.pop()
        return Node(
            "ArrowFunctionExpression", start, body.end,
            params=params, body=body, is_async=is_async,
        )

    def _paren_group_precedes_arrow(self) -> bool:
        """Scan past a balanced () group and report whether => follows."""
        state = self.cur.save()
        try:
            depth = 0
            prev: Optional[Token] = None
            while True:
                regex_ok = not (
                    prev is not None
                    and (
                        prev.kind in ("num", "str", "template", "regex")
                        or (prev.kind == "name" and (prev.value not in KEYWORDS or prev.value in EXPR_END_WORDS))
                        or (prev.kind == "punct" and prev.value in (")", "]", "}", "++", "--"))
                    )
                )
                token = self.cur.next(regex_ok)
                if token.kind == "eof":
                    return False
                if token.kind == "punct":
                    if token.value in ("(", "[", "{"):
                        depth += 1
                    elif token.value in (")", "]", "}"):
                        depth -= 1
                        if depth == 0:
                            nxt = self.cur.peek()
                            return nxt.kind == "punct" and nxt.value == "=>"
                        if depth < 0:
                            return False
                prev = token
        finally:
            self.cur.restore(state)

    def parse_conditional(self, *, no_in: bool = False) -> Node:
        test = self.parse_binary(0, no_in=no_in)
        if self._at("?"):
            self.cur.next()
            consequent = self.parse_assignment()
            self._expect(":")
            alternate = self.parse_assignment(no_in=no_in)
            return Node(
                "ConditionalExpression", test.start, alternate.end,
                test=test, consequent=consequent, alternate=alternate,
            )
        return test

    def parse_binary(self, min_precedence: int, *, no_in: bool = False) -> Node:
        left = self.parse_unary()
        while True:
            token = self.cur.peek()
            op = token.value if token.kind in ("punct", "name") else None
            if op is None or op not in BINARY_PRECEDENCE:
                return left
            if op == "in" and no_in:
                return left
            precedence = BINARY_PRECEDENCE[op]
            if precedence <= min_precedence:
                return left
            self.cur.next()
            # ** is right-associative; everything else is left-associative.
            right = self.parse_binary(precedence - 1 if op == "**" else precedence, no_in=no_in)
            kind = "LogicalExpression" if op in ("&&", "||", "??") else "BinaryExpression"
            left = Node(kind, left.start, right.end, operator=op, left=left, right=right)

    def parse_unary(self) -> Node:
        token = self.cur.peek()
        if token.kind == "punct" and token.value in ("+", "-", "~", "!", "++", "--"):
            self.cur.next()
            argument = self.parse_unary()
            if token.value in ("++", "--"):
                return Node(
                    "UpdateExpression", token.start, argument.end,
                    operator=token.value, argument=argument, prefix=True,
                )
            return Node(
                "UnaryExpression", token.start, argument.end,
                operator=token.value, argument=argument,
            )
        if token.kind == "name" and token.value in ("delete", "void", "typeof"):
            self.cur.next()
            argument = self.parse_unary()
            return Node(
                "UnaryExpression", token.start, argument.end,
                operator=token.value, argument=argument,
            )
        if token.kind == "name" and token.value == "await" and self._async_stack[-1]:
            state = self.cur.save()
            self.cur.next()
            nxt = self.cur.peek(True)
            if nxt.kind == "eof" or (
                nxt.kind == "punct" and nxt.value in (")", "]", "}", ",", ";", ":", "=>")
            ):
                self.cur.restore(state)  # plain identifier use of `await`
            else:
                argument = self.parse_unary()
                return Node("AwaitExpression", token.start, argument.end, argument=argument)
        return self.parse_postfix()

    def parse_postfix(self) -> Node:
        expr = self.parse_unary_chain()
        token = self.cur.peek()
        if (
            token.kind == "punct"
            and token.value in ("++", "--")
            and not token.nl_before
        ):
            self.cur.next()
            return Node(
                "UpdateExpression", expr.start, token.end,
                operator=token.value, argument=expr, prefix=False,
            )
        return expr

    def parse_unary_chain(self) -> Node:
        token = self.cur.peek()
        if token.kind == "name" and token.value == "new":
            return self.parse_call_member(self.parse_new())
        return self.parse_call_member(self.parse_primary())

    def parse_new(self) -> Node:
        kw = self.cur.next()
        if self._at("."):
            self.cur.next()
            prop = self.cur.next()
            return Node(
                "MetaProperty", kw.start, prop.end, meta="new", property=prop.value,
            )
        if self._at("new"):
            callee = self.parse_new()
        else:
            callee = self.parse_member_only(self.parse_primary())
        if self._at("("):
            args, end = self.parse_arguments()
            return Node("NewExpression", kw.start, end, callee=callee, arguments=args)
        return Node("NewExpression", kw.start, callee.end, callee=callee, arguments=[])

    def parse_member_only(self, expr: Node) -> Node:
        # Member accesses only: a `(` here belongs to `new`'s argument list.
        while True:
            token = self.cur.peek()
            if token.kind == "punct" and token.value == ".":
                self.cur.next()
                prop = self.cur.next()
                if prop.kind != "name":
                    self._fail("expected property name", prop)
                prop_node = Node("Identifier", prop.start, prop.end, name=prop.value)
                expr = Node(
                    "MemberExpression", expr.start, prop.end,
                    object=expr, property=prop_node, computed=False, optional=False,
                )
            elif token.kind == "punct" and token.value == "[":
                self.cur.next()
                inner = self.parse_expression()
                end = self._expect("]").end
                expr = Node(
                    "MemberExpression", expr.start, end,
                    object=expr, property=inner, computed=True, optional=False,
                )
            else:
                return expr

    def parse_arguments(self) -> tuple[list[Node], int]:
        self._expect("(")
        args = []
        while not self._at(")"):
            if self._at("..."):
                dots = self.cur.next()
                arg = self.parse_assignment()
                args.append(Node("SpreadElement", dots.start, arg.end, argument=arg))
            else:
                args.append(self.parse_assignment())
            if not self._eat(","):
                break
        end = self._expect(")").end
        return args, end

    def parse_call_member(self, expr: Node) -> Node:
        while True:
            token = self.cur.peek()
            if token.kind == "punct" and token.value == ".":
                self.cur.next()
                prop = self.cur.next()
                if prop.kind != "name":
                    self._fail("expected property name", prop)
                prop_node = Node("Identifier", prop.start, prop.end, name=prop.value)
                expr = Node(
                    "MemberExpression", expr.start, prop.end,
                    object=expr, property=prop_node, computed=False, optional=False,
                )
            elif token.kind == "punct" and token.value == "?.":
                self.cur.next()
                nxt = self.cur.peek()
                if nxt.kind == "punct" and nxt.value == "(":
                    args, end = self.parse_arguments()
                    expr = Node(
                        "CallExpression", expr.start, end,
                        callee=expr, arguments=args, optional=True,
                    )
                elif nxt.kind == "punct" and nxt.value == "[":
                    self.cur.next()
                    inner = self.parse_expression()
                    end = self._expect("]").end
                    expr = Node(
                        "MemberExpression", expr.start, end,
                        object=expr, property=inner, computed=True, optional=True,
                    )
                else:
                    prop = self.cur.next()
                    if prop.kind != "name":
                        self._fail("expected property name", prop)
                    prop_node = Node("Identifier", prop.start, prop.end, name=prop.value)
                    expr = Node(
                        "MemberExpression", expr.start, prop.end,
                        object=expr, property=prop_node, computed=False, optional=True,
                    )
            elif token.kind == "punct" and token.value == "[":
                self.cur.next()
                inner = self.parse_expression()
                end = self._expect("]").end
                expr = Node(
                    "MemberExpression", expr.start, end,
                    object=expr, property=inner, computed=True, optional=False,
                )
            elif token.kind == "punct" and token.value == "(":
                args, end = self.parse_arguments()
                expr = Node(
                    "CallExpression", expr.start, end,
                    callee=expr, arguments=args, optional=False,
                )
            elif token.kind == "template":
                self.cur.next()
                quasi = Node("TemplateLiteral", token.start, token.end, raw=token.value)
                expr = Node(
                    "TaggedTemplateExpression", expr.start, token.end,
                    tag=expr, quasi=quasi,
                )
            else:
                return expr

    def _literal(self, token: Token) -> Node:
        return Node("Literal", token.start, token.end, raw=token.value, literal_kind=token.kind)

    def parse_primary(self) -> Node:
        token = self.cur.peek(True)
        if token.kind == "num" or token.kind == "str" or token.kind == "regex":
            self.cur.next(True)
            return self._literal(token)
        if token.kind == "template":
            self.cur.next(True)
            return Node("TemplateLiteral", token.start, token.end, raw=token.value)
        if token.kind == "punct":
            if token.value == "(":
                self.cur.next()
                expr = self.parse_expression()
                end = self._expect(")").end
                return Node("ParenthesizedExpression", token.start, end, expression=expr)
            if token.value == "[":
                return self.parse_array()
            if token.value == "{":
                return self.parse_object()
            self._fail(f"unexpected token {token.value!r}", token)
        if token.kind == "name":
            word = token.value
            if word == "function":
                return self.parse_function(declaration=False)
            if word == "async" and self._peek2_is("function"):
                return self.parse_function(declaration=False)
            if word == "class":
                return self.parse_class(declaration=False)
            if word == "this":
                self.cur.next()
                return Node("ThisExpression", token.start, token.end)
            if word == "super":
                self.cur.next()
                return Node("SuperExpression", token.start, token.end)
            if word in ("true", "false", "null"):
                self.cur.next()
                return Node("Literal", token.start, token.end, raw=word, literal_kind="name")
            if word == "import":
                self.cur.next()
                if self._at("."):
                    self.cur.next()
                    prop = self.cur.next()
                    return Node(
                        "MetaProperty", token.start, prop.end,
                        meta="import", property=prop.value,
                    )
                args, end = self.parse_arguments()
                return Node("ImportExpression", token.start, end, arguments=args)
            if word in KEYWORDS:
                self._fail(f"unexpected keyword {word!r}", token)
            self.cur.next()
            return Node("Identifier", token.start, token.end, name=word)
        if token.kind == "eof":
            self._fail("unexpected end of input", token)
        self._fail(f"unexpected token {token.value!r}", token)
        raise AssertionError("unreachable")

    def parse_array(self) -> Node:
        start = self._expect("[").start
        elements: list[Optional[Node]] = []
        while not self._at("]"):
            if self._at(","):
                self.cur.next()
                elements.append(None)  # elision
                continue
            if self._at("..."):
                dots = self.cur.next()
                arg = self.parse_assignment()
                elements.append(Node("SpreadElement", dots.start, arg.end, argument=arg))
            else:
                elements.append(self.parse_assignment())
            if not self._eat(","):
                break
        end = self._expect("]").end
        return Node(
            "ArrayExpression", start, end,
            elements=[e for e in elements if e is not None],
        )

    def parse_object(self) -> Node:
        start = self._expect("{").start
        properties = []
        while not self._at("}"):
            properties.append(self.parse_object_property())
            if not self._eat(","):
                break
        end = self._expect("}").end
        return Node("ObjectExpression", start, end, properties=properties)

    def parse_object_property(self) -> Node:
        token = self.cur.peek()
        if token.kind == "punct" and token.value == "...":
            self.cur.next()
            arg = self.parse_assignment()
            return Node("SpreadElement", token.start, arg.end, argument=arg)
        modifier = None
        if (
            token.kind == "name"
            and token.value in ("get", "set", "async")
            and not self._peek2_is_any(":", ",", "(", "}", "=")
        ):
            self.cur.next()
            modifier = token.value
        generator = bool(self._eat("*"))
        key = self.parse_property_key()
        nxt = self.cur.peek()
        if nxt.kind == "punct" and nxt.value == "(":
            self._async_stack.append(modifier == "async")
            self._generator_stack.append(generator)
            try:
                params = self.parse_params()
                body = self.parse_block()
            finally:
                self._async_stack.pop()
                self._generator_stack.pop()
            value = Node(
                "FunctionExpression", key.start, body.end,
                id=None, params=params, body=body,
                is_async=modifier == "async", generator=generator,
            )
            return Node(
                "Property", token.start, body.end,
                key=key, value=value, computed=key.kind == "ComputedKey",
                shorthand=False, property_kind=modifier if modifier in ("get", "set") else "init",
            )
        if nxt.kind == "punct" and nxt.value == ":":
            self.cur.next()
            value = self.parse_assignment()
            return Node(
                "Property", token.start, value.end,
                key=key, value=value, computed=key.kind == "ComputedKey",
                shorthand=False, property_kind="init",
            )
        if nxt.kind == "punct" and nxt.value == "=":
            # Shorthand with default: only valid when the object literal is
            # reinterpreted as a destructuring pattern; accepted loosely.
            self.cur.next()
            value = self.parse_assignment()
            return Node(
                "Property", token.start, value.end,
                key=key, value=value, computed=False, shorthand=True, property_kind="init",
            )
        if key.kind != "Identifier":
            self._fail("expected ':' after property name", nxt)
        return Node(
            "Property", token.start, key.end,
            key=key, value=key, computed=False, shorthand=True, property_kind="init",
        )


def parse(source: str) -> Node:
    """Parse a script; raises ParseError. The result's spans index ``source``."""
    parser = Parser(source)
    program = parser.parse_program()
    return program


def parse_check(source: str) -> Optional[str]:
    """None when the source parses, else the parse error message."""
    try:
        parse(source)
        return None
    except ParseError as exc:
        return str(exc)
