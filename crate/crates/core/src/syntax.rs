//! Tokens, the expression grammar and the expression printer shared by the
//! CVM, IML and fact-list text formats.
//!
//! ```text
//! expr    := concat (("=" | "<=" | "<" | ">" | ">=" | "<s") concat)?
//! concat  := add ("@" concat)?
//! add     := mul (("+b" | "-b" | "+N" | "-N") mul)*
//! mul     := postfix ("*b" postfix)*
//! postfix := atom ("{" expr "," expr "}")*
//! atom    := literal | ident | ident "(" expr,* ")" | "len" "(" expr ")" | "(" expr ")"
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::bits::{format_literal, parse_literal, WordParams};
use crate::expr::{Expr, PtrBase};
use crate::ops;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// Raw literal text, parsed later against the word parameters.
    Lit(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const MULTI_SYMS: &[&str] = &["<=", ">=", "<s", "+b", "-b", "+N", "-N", "*b"];
const SINGLE_SYMS: &[&str] = &["(", ")", "{", "}", "[", "]", ",", ";", "|", "!", "@", "=", "<", ">", "~", "/", ":"];

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: &str| ParseError { line, col, msg: String::from(msg) };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (tl, tc) = (line, col);
        let start = i;
        if c == '"' || ((c == 'x' || c == 'b') && chars.get(i + 1) == Some(&'"')) {
            if c != '"' {
                i += 1;
            }
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\\' {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '\n' {
                    return Err(err(tl, tc, "unterminated string literal"));
                }
                i += 1;
            }
            if i >= chars.len() {
                return Err(err(tl, tc, "unterminated string literal"));
            }
            i += 1;
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Lit(text), line: tl, col: tc });
            continue;
        }
        if ident_start(c) {
            while i < chars.len() && ident_continue(chars[i]) {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let is_lit = text == "eps"
                || text == "iN"
                || (text.len() > 1 && text.starts_with('i') && text[1..].bytes().all(|b| b.is_ascii_digit()));
            out.push(Token { tok: if is_lit { Tok::Lit(text) } else { Tok::Ident(text) }, line: tl, col: tc });
            continue;
        }
        if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Num(text), line: tl, col: tc });
            continue;
        }
        let mut matched = None;
        for s in MULTI_SYMS {
            let sc: Vec<char> = s.chars().collect();
            if chars[i..].starts_with(&sc) && !chars.get(i + 2).copied().is_some_and(ident_continue) {
                matched = Some(*s);
                break;
            }
        }
        if matched.is_none() {
            matched = SINGLE_SYMS.iter().copied().find(|s| s.starts_with(c));
        }
        match matched {
            Some(s) => {
                i += s.chars().count();
                col += s.chars().count();
                out.push(Token { tok: Tok::Sym(s), line: tl, col: tc });
            }
            None => return Err(err(tl, tc, &alloc::format!("unexpected character '{c}'"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

/// Cursor over a token vector.
pub struct TokenStream {
    toks: Vec<Token>,
    pos: usize,
}

impl TokenStream {
    pub fn new(src: &str) -> Result<Self, ParseError> {
        Ok(TokenStream { toks: lex(src)?, pos: 0 })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[core::cmp::min(self.pos + k, self.toks.len() - 1)].tok
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn error<T>(&self, msg: &str) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError { line: t.line, col: t.col, msg: String::from(msg) })
    }

    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    pub fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn eat_ident(&mut self, s: &str) -> bool {
        if self.is_ident(s) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(&alloc::format!("expected '{s}', found {}", describe(self.peek())))
        }
    }

    pub fn expect_keyword(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_ident(s) {
            Ok(())
        } else {
            self.error(&alloc::format!("expected '{s}', found {}", describe(self.peek())))
        }
    }

    pub fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            t => self.error(&alloc::format!("expected identifier, found {}", describe(&t))),
        }
    }

    pub fn expect_num(&mut self) -> Result<usize, ParseError> {
        match self.peek().clone() {
            Tok::Num(s) => match s.parse() {
                Ok(n) => {
                    self.next();
                    Ok(n)
                }
                Err(_) => self.error("number too large"),
            },
            t => self.error(&alloc::format!("expected number, found {}", describe(&t))),
        }
    }
}

pub fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) | Tok::Lit(s) | Tok::Num(s) => alloc::format!("'{s}'"),
        Tok::Sym(s) => alloc::format!("'{s}'"),
        Tok::Eof => String::from("end of input"),
    }
}

/// Identifiers that cannot name variables.
pub const KEYWORDS: &[&str] = &["len", "let", "in", "if", "then", "else", "new", "out", "event"];

pub fn parse_expr_from(ts: &mut TokenStream, params: &WordParams) -> Result<Expr, ParseError> {
    let lhs = parse_concat(ts, params)?;
    for &(name, level) in ops::INFIX {
        if level == 1 && ts.is_sym(name) {
            ts.next();
            let rhs = parse_concat(ts, params)?;
            return Ok(Expr::op2(name, lhs, rhs));
        }
    }
    Ok(lhs)
}

fn parse_concat(ts: &mut TokenStream, params: &WordParams) -> Result<Expr, ParseError> {
    let lhs = parse_binary(ts, params, 3)?;
    if ts.eat_sym("@") {
        let rhs = parse_concat(ts, params)?;
        return Ok(Expr::concat(lhs, rhs));
    }
    Ok(lhs)
}

fn parse_binary(ts: &mut TokenStream, params: &WordParams, level: u8) -> Result<Expr, ParseError> {
    if level > 4 {
        return parse_postfix(ts, params);
    }
    let mut lhs = parse_binary(ts, params, level + 1)?;
    'outer: loop {
        for &(name, l) in ops::INFIX {
            if l == level && ts.is_sym(name) {
                ts.next();
                let rhs = parse_binary(ts, params, level + 1)?;
                lhs = Expr::op2(name, lhs, rhs);
                continue 'outer;
            }
        }
        return Ok(lhs);
    }
}

fn parse_postfix(ts: &mut TokenStream, params: &WordParams) -> Result<Expr, ParseError> {
    let mut e = parse_atom(ts, params)?;
    while ts.eat_sym("{") {
        let o = parse_expr_from(ts, params)?;
        ts.expect_sym(",")?;
        let l = parse_expr_from(ts, params)?;
        ts.expect_sym("}")?;
        e = Expr::range(e, o, l);
    }
    Ok(e)
}

fn parse_atom(ts: &mut TokenStream, params: &WordParams) -> Result<Expr, ParseError> {
    match ts.peek().clone() {
        Tok::Lit(s) => match parse_literal(&s, params) {
            Ok(b) => {
                ts.next();
                Ok(Expr::Const(b))
            }
            Err(e) => ts.error(&e.to_string()),
        },
        Tok::Sym("(") => {
            ts.next();
            let e = parse_expr_from(ts, params)?;
            ts.expect_sym(")")?;
            Ok(e)
        }
        Tok::Ident(name) => {
            ts.next();
            if ts.eat_sym("(") {
                let mut args = Vec::new();
                if !ts.eat_sym(")") {
                    loop {
                        args.push(parse_expr_from(ts, params)?);
                        if ts.eat_sym(")") {
                            break;
                        }
                        ts.expect_sym(",")?;
                    }
                }
                if name == "len" {
                    if args.len() != 1 {
                        return ts.error("len takes one argument");
                    }
                    return Ok(Expr::len_of(args.pop().expect("one argument")));
                }
                Ok(Expr::Op(name, args))
            } else if KEYWORDS.contains(&name.as_str()) {
                ts.error(&alloc::format!("keyword '{name}' used as a variable"))
            } else {
                Ok(Expr::Var(name))
            }
        }
        t => ts.error(&alloc::format!("expected expression, found {}", describe(&t))),
    }
}

/// Parses a complete expression.
pub fn parse_expr(src: &str, params: &WordParams) -> Result<Expr, ParseError> {
    let mut ts = TokenStream::new(src)?;
    let e = parse_expr_from(&mut ts, params)?;
    if !ts.at_eof() {
        return ts.error(&alloc::format!("unexpected {}", describe(ts.peek())));
    }
    Ok(e)
}

/// Parses a list of facts separated by `;`, `,` or newlines.
pub fn parse_facts(src: &str, params: &WordParams) -> Result<Vec<Expr>, ParseError> {
    let mut ts = TokenStream::new(src)?;
    let mut out = Vec::new();
    while !ts.at_eof() {
        if ts.eat_sym(";") || ts.eat_sym(",") {
            continue;
        }
        out.push(parse_expr_from(&mut ts, params)?);
    }
    Ok(out)
}

const LEVEL_CMP: u8 = 1;
const LEVEL_CONCAT: u8 = 2;
const LEVEL_POSTFIX: u8 = 5;
const LEVEL_ATOM: u8 = 6;

fn level_of(e: &Expr) -> u8 {
    match e {
        Expr::Op(n, args) if args.len() == 2 => ops::infix_level(n).unwrap_or(LEVEL_ATOM),
        Expr::Concat(..) => LEVEL_CONCAT,
        Expr::Range(..) => LEVEL_POSTFIX,
        _ => LEVEL_ATOM,
    }
}

fn write_expr(out: &mut String, e: &Expr, params: &WordParams, min: u8) {
    let level = level_of(e);
    let paren = level < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Const(b) => out.push_str(&format_literal(b, params)),
        Expr::Var(v) => out.push_str(v),
        Expr::Op(n, args) if args.len() == 2 && level != LEVEL_ATOM => {
            let (lmin, rmin) = if level == LEVEL_CMP { (level + 1, level + 1) } else { (level, level + 1) };
            write_expr(out, &args[0], params, lmin);
            let _ = write!(out, " {n} ");
            write_expr(out, &args[1], params, rmin);
        }
        Expr::Op(n, args) => {
            out.push_str(n);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a, params, 0);
            }
            out.push(')');
        }
        Expr::Concat(a, b) => {
            write_expr(out, a, params, LEVEL_CONCAT + 1);
            out.push_str(" @ ");
            write_expr(out, b, params, LEVEL_CONCAT);
        }
        Expr::Range(x, o, l) => {
            write_expr(out, x, params, LEVEL_POSTFIX);
            out.push('{');
            write_expr(out, o, params, 0);
            out.push_str(", ");
            write_expr(out, l, params, 0);
            out.push('}');
        }
        Expr::Len(x) => {
            out.push_str("len(");
            write_expr(out, x, params, 0);
            out.push(')');
        }
        Expr::Ptr(pb, o) => {
            match pb {
                PtrBase::Stack(v) => {
                    let _ = write!(out, "ptr(stack {v}, ");
                }
                PtrBase::Heap(i) => {
                    let _ = write!(out, "ptr(heap {i}, ");
                }
            }
            write_expr(out, o, params, 0);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

/// Canonical text of `e`; [`parse_expr`] inverts it for pointer-free expressions.
pub fn print_expr(e: &Expr, params: &WordParams) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, params, 0);
    s
}

/// Display adapter pairing an expression with its word parameters.
pub struct Show<'a>(pub &'a Expr, pub &'a WordParams);

impl fmt::Display for Show<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self.0, self.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use proptest::prelude::*;

    const P: WordParams = WordParams::new(32);

    #[test]
    fn parses_fixture_expressions() {
        let e = parse_expr("m1{i32, iN} +b iN +b i32 <= len(m1)", &P).unwrap();
        let m1 = Expr::var("m1");
        let field = Expr::range(m1.clone(), Expr::word(32, &P), Expr::word(32, &P));
        let lhs = Expr::add_b(Expr::add_b(field, Expr::word(32, &P)), Expr::word(32, &P));
        assert_eq!(e, Expr::le(lhs, Expr::len_of(m1)));
        let c = parse_expr("\"msg1\" @ len(nA) @ nA @ pkA", &P).unwrap();
        assert_eq!(c.concat_pieces().len(), 4);
        assert_eq!(c.concat_pieces()[0], &Expr::Const(BitString::from_ascii("msg1")));
        let m = parse_expr("x2 = mac(k, x1)", &P).unwrap();
        assert_eq!(m, Expr::eq(Expr::var("x2"), Expr::op2("mac", Expr::var("k"), Expr::var("x1"))));
        assert_eq!(print_expr(&m, &P), "x2 = mac(k, x1)");
    }

    #[test]
    fn reports_error_position() {
        let err = parse_expr("a @ (b", &P).unwrap_err();
        assert_eq!((err.line, err.col), (1, 7));
        assert!(parse_expr("len(a, b)", &P).is_err());
        assert!(parse_expr("let", &P).is_err());
    }

    #[test]
    fn printer_parenthesises() {
        let e = Expr::concat(Expr::concat(Expr::var("a"), Expr::var("b")), Expr::var("c"));
        assert_eq!(print_expr(&e, &P), "(a @ b) @ c");
        let s = Expr::op2(ops::SUB_N, Expr::var("a"), Expr::add_n(Expr::var("b"), Expr::var("c")));
        assert_eq!(print_expr(&s, &P), "a -N (b +N c)");
        let r = Expr::range(Expr::concat(Expr::var("a"), Expr::var("b")), Expr::word(0, &P), Expr::var("l"));
        assert_eq!(print_expr(&r, &P), "(a @ b){i0, l}");
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u64..2000).prop_map(|n| Expr::word(n, &P)),
            prop::collection::vec(any::<bool>(), 0..20).prop_map(|b| Expr::Const(BitString::from_bits(b))),
            "[a-h][a-z0-9]{0,3}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str())).prop_map(|s| Expr::var(&s)),
        ];
        leaf.prop_recursive(4, 30, 3, |inner| {
            let name = prop_oneof![
                Just(ops::EQ), Just(ops::LE), Just(ops::LT), Just(ops::ADD_B), Just(ops::SUB_B),
                Just(ops::ADD_N), Just(ops::SUB_N), Just(ops::MUL_B), Just("mac"), Just(ops::NOT)
            ];
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::concat(a, b)),
                (inner.clone(), inner.clone(), inner.clone()).prop_map(|(a, b, c)| Expr::range(a, b, c)),
                inner.clone().prop_map(Expr::len_of),
                (name, inner.clone(), inner).prop_map(|(n, a, b)| {
                    if n == ops::NOT { Expr::op(n, alloc::vec![a]) } else { Expr::op2(n, a, b) }
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let text = print_expr(&e, &P);
            prop_assert_eq!(parse_expr(&text, &P).unwrap(), e);
        }
    }
}
