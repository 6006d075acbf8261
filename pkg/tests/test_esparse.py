"""Tokenizer and parser: spans, ASI, regex/division, loose ES2015+ forms."""

from __future__ import annotations

import shutil
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webheal.esparse import (
    DECLARATION_KINDS,
    STATEMENT_KINDS,
    Node,
    ParseError,
    SourceIndex,
    iter_nodes,
    parse,
    parse_check,
)

ACCEPTED = [
    "var a=1;\nif(m){}",
    "a();b();c();",
    "var m = null; m.test = '';",
    'document.getElementById("elementID").innerText = "x";',
    "if (typeof m != 'undefined' && m) {if(m){}}",
    "var func = null; if (typeof func === 'function') {func()}",
    "for (var i=0;i<10;i++){x+=i}",
    "for (var k in obj) f(k);",
    "for (const k of [1,2,3]) f(k);",
    "for (;;) {break}",
    "const f = (a, b=2, ...rest) => a + b;",
    "async function g(){ await h(); }",
    "function* gen(){ yield 1; yield* other(); }",
    "class A extends B { constructor(){super()} static x = 1; get p(){return 1} }",
    "label: while(1){break label}",
    "try { x() } catch (e) { y() } finally { z() }",
    "try { x() } catch { y() }",
    "switch(a){case 1: f(); break; default: g()}",
    "var re = /ab[/]c/g.test(s) ? 1 : 2;",
    "x = a / b / c;",
    "`tpl ${ {a:1}['a'] } end`;",
    "let {a, b: [c]} = obj;",
    "obj?.meth?.(1)?.[2];",
    "a ?? b;",
    "new Foo.Bar(x).baz();",
    "new Date;",
    "do x(); while(0)",
    "a\n++b",
    "throw new Error('x');",
    "tag`hello ${name}`;",
    "var s = 'it\\'s';",
    'var d = "a\\"b";',
    "if (a) /re/.test(b);",
    "f(function(){return 1});",
    "!function(){}();",
    "x ** y ** z;",
    "a ??= b; c ||= d; e &&= f;",
    "new.target;",
    "var x = {get: 1, set: 2, async: 3, static: 4};",
    "var y = {get p(){return 1}, set p(v){}, m(){}, [k]: 1, ...rest, short};",
    "({a = 1}) => a;",
    "() => {};",
    "x => x * 2;",
    "async (a, b) => a + b;",
    "a = b\n(c).d()",
    "while (a) b++;",
    "with (o) { x = y; }",
    "debugger;",
    ";;;",
    "var x = .5 + 0x1F + 0o17 + 0b11 + 1e3 + 1_000;",
    "var u = void 0, t = typeof x, d = delete o.p;",
    "s = a in b;",
    "i = x instanceof Y;",
    "arr = [1,,2,...rest];",
    "c = cond ? yes : no;",
    "seq = (a, b, c);",
    "this.x = 1;",
    "'use strict';",
    "﻿var bom = 1;",
    "#!/usr/bin/env node\nvar sh = 1;",
    "var été = 1;",
    "if (a) {} else if (b) {} else {}",
]

MODULE_ACCEPTED = [
    "import x from 'mod';",
    "import {a as b, c} from 'm';",
    "import * as ns from 'm';",
    "import 'side-effect';",
    "export default 42;",
    "export default function f(){}",
    "export {a as b} from 'm';",
    "export * from 'm';",
    "export var a = 1;",
    "export function g(){}",
]

REJECTED = [
    "var a = ;",
    "if (",
    "function (){}",
    "a b",
    "'unterminated",
    "/*",
    "`abc",
    "a?.:",
    "{,}",
    "try{}",
    "do{}while",
    "class{}",
    "<div/>",
    "var 1x = 2;",
    "return@",
    "a === ;",
    "for (a of) {}",
    "f(,)",
    "switch(a){foo}",
    "new",
]


@pytest.mark.parametrize("source", ACCEPTED + MODULE_ACCEPTED)
def test_accepts(source):
    parse(source)


@pytest.mark.parametrize("source", REJECTED)
def test_rejects(source):
    with pytest.raises(ParseError):
        parse(source)


def test_parse_check_reports():
    assert parse_check("var a = 1;") is None
    message = parse_check("var a = ;")
    assert message is not None and "line 1" in message


needs_node = pytest.mark.skipif(shutil.which("node") is None, reason="node not installed")


@needs_node
@pytest.mark.parametrize("source", ACCEPTED)
def test_accepted_samples_agree_with_external_engine(source, tmp_path):
    path = tmp_path / "sample.js"
    path.write_text(source, encoding="utf-8")
    proc = subprocess.run(
        ["node", "--check", str(path)], capture_output=True, text=True, timeout=30
    )
    assert proc.returncode == 0, f"engine rejected accepted sample: {proc.stderr}"


def test_statement_spans_cover_exact_text():
    src = "a();b();c();"
    body = parse(src)["body"]
    assert [src[s.start:s.end] for s in body] == ["a();", "b();", "c();"]


def test_span_excludes_inserted_semicolon():
    src = "x = 1\ny = 2"
    body = parse(src)["body"]
    assert [src[s.start:s.end] for s in body] == ["x = 1", "y = 2"]


def test_nested_statement_structure():
    src = "if (a) { b(); } else { c(); }"
    stmt = parse(src)["body"][0]
    assert stmt.kind == "IfStatement"
    assert stmt["consequent"].kind == "BlockStatement"
    assert stmt["alternate"].kind == "BlockStatement"
    inner = stmt["consequent"]["body"][0]
    assert src[inner.start:inner.end] == "b();"


def test_single_statement_if_body_is_not_block():
    src = "if (a) b();"
    stmt = parse(src)["body"][0]
    assert stmt["consequent"].kind == "ExpressionStatement"
    assert stmt["consequent"].parent is stmt


def test_parent_links():
    src = "while (a) { f(); }"
    program = parse(src)
    loop = program["body"][0]
    block = loop["body"]
    assert block.parent is loop
    assert block["body"][0].parent is block
    assert program.parent is None


def test_member_call_shape():
    src = "document.getElementById('x').innerText = 'y';"
    expr = parse(src)["body"][0]["expression"]
    assert expr.kind == "AssignmentExpression"
    member = expr["left"]
    assert member.kind == "MemberExpression"
    assert member["property"]["name"] == "innerText"
    call = member["object"]
    assert call.kind == "CallExpression"
    callee = call["callee"]
    assert callee["object"]["name"] == "document"
    assert callee["property"]["name"] == "getElementById"
    assert call["arguments"][0]["literal_kind"] == "str"


def test_regex_vs_division():
    src = "var r = /x/g; var q = a / b / c;"
    decls = parse(src)["body"]
    first_init = decls[0]["declarations"][0]["init"]
    assert first_init.kind == "Literal" and first_init["literal_kind"] == "regex"
    second_init = decls[1]["declarations"][0]["init"]
    assert second_init.kind == "BinaryExpression"


def test_asi_restricted_return():
    src = "function f() { return\n1; }"
    fn = parse(src)["body"][0]
    body = fn["body"]["body"]
    assert body[0].kind == "ReturnStatement"
    assert body[0]["argument"] is None
    assert body[1].kind == "ExpressionStatement"


def test_postfix_not_across_newline():
    body = parse("a\n++b")["body"]
    assert body[0]["expression"].kind == "Identifier"
    assert body[1]["expression"].kind == "UpdateExpression"


def test_template_is_atomic_span():
    src = "var t = `a ${f('}')} b`;"
    init = parse(src)["body"][0]["declarations"][0]["init"]
    assert init.kind == "TemplateLiteral"
    assert src[init.start:init.end] == "`a ${f('}')} b`"


def test_source_index_round_trip():
    src = "ab\ncde\r\nf\n"
    idx = SourceIndex(src)
    for offset in range(len(src)):
        line, col = idx.line_col(offset)
        assert idx.offset(line, col) == offset


def test_source_index_unicode_terminators():
    idx = SourceIndex("a b")
    assert idx.line_col(2) == (2, 0)


def test_statement_kind_sets_consistent():
    assert DECLARATION_KINDS <= STATEMENT_KINDS
    src = "var a=1; function f(){} class C{} x=2;"
    kinds = [s.kind for s in parse(src)["body"]]
    assert kinds[:3] == ["VariableDeclaration", "FunctionDeclaration", "ClassDeclaration"]
    assert all(k in STATEMENT_KINDS for k in kinds)


def test_iter_nodes_preorder():
    src = "if (a) b();"
    kinds = [n.kind for n in iter_nodes(parse(src))]
    assert kinds[0] == "Program"
    assert "IfStatement" in kinds and "CallExpression" in kinds


def test_error_carries_position():
    with pytest.raises(ParseError) as info:
        parse("var a = 1;\nvar b = ;")
    assert info.value.line == 2


expr_atoms = st.sampled_from(["a", "b.c", "f(1)", "'s'", "1", "x[0]", "(y)"])
binops = st.sampled_from(["+", "-", "*", "/", "===", "&&", "||"])


@given(st.lists(st.tuples(expr_atoms, binops), min_size=1, max_size=6), expr_atoms)
@settings(max_examples=150)
def test_generated_expression_statements_parse(pairs, last):
    src = " ".join(f"{atom} {op}" for atom, op in pairs) + f" {last};"
    program = parse(src)
    assert len(program["body"]) == 1


@given(st.integers(min_value=1, max_value=8))
@settings(max_examples=50)
def test_generated_nested_blocks_parse(depth):
    src = "{" * depth + "x();" + "}" * depth
    stmt = parse(src)["body"][0]
    for _ in range(depth - 1):
        assert stmt.kind == "BlockStatement"
        stmt = stmt["body"][0]


def test_arbitrary_binary_garbage_never_hangs():
    for blob in (b"\x00\x01\x02", bytes(range(256))):
        text = blob.decode("latin-1")
        try:
            parse(text)
        except ParseError:
            pass
