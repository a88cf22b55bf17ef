//! Recursive descent parser. Parsing also performs the two syntax-level
//! rewrites the language defines: `for` loops desugar into declarations plus
//! a `while`, and user function calls are inlined with fresh-named locals.

use crate::ast::*;
use crate::lexer::{lex, LexError, Pos, Tok, Token};
use crate::value::Value;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("{0}")]
    Lex(#[from] LexError),
    #[error("{pos}: expected {expected}, found {found}")]
    Unexpected {
        expected: String,
        found: String,
        pos: Pos,
    },
    #[error("{pos}: commute takes exactly two fragments, found {found}")]
    CommuteArity { found: usize, pos: Pos },
    #[error("{pos}: unknown function `{name}`")]
    UnknownFunction { name: String, pos: Pos },
    #[error("{pos}: recursive call to `{name}` is not supported")]
    RecursiveCall { name: String, pos: Pos },
    #[error("{pos}: function call is not allowed in a loop condition")]
    CallInLoopCondition { pos: Pos },
    #[error("{pos}: {message}")]
    Invalid { message: String, pos: Pos },
    #[error("invalid @summary annotation: {0}")]
    BadSummary(String),
}

pub type ParseResult<T> = Result<T, ParseError>;

/// Table builtins that survive parsing as calls.
pub const BUILTIN_CALLS: [&str; 2] = ["ht_mem", "ht_size"];

pub fn is_builtin_call(name: &str) -> bool {
    BUILTIN_CALLS.contains(&name)
}

/// Parse a whole program. Errors are reported as a list (currently the
/// first error encountered).
pub fn parse_program(source: &str) -> Result<Program, Vec<ParseError>> {
    parse_program_inner(source).map_err(|e| vec![e])
}

fn parse_program_inner(source: &str) -> ParseResult<Program> {
    let tokens = lex(source)?;
    let mut p = Parser::new(tokens);
    let program = p.program()?;
    Ok(program)
}

/// Parse a bare expression (used for CLI-provided conditions).
pub fn parse_expression(source: &str) -> ParseResult<Expr> {
    let tokens = lex(source)?;
    let mut p = Parser::new(tokens);
    p.allow_old = true;
    let e = p.expr()?;
    p.expect(Tok::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    allow_old: bool,
    used_names: BTreeSet<String>,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        let mut used_names = BTreeSet::new();
        for t in &tokens {
            if let Tok::Ident(name) = &t.tok {
                used_names.insert(name.clone());
            }
        }
        Parser {
            tokens,
            pos: 0,
            allow_old: false,
            used_names,
        }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> Pos {
        self.tokens[self.pos].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if *self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> ParseResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(Parse_err(
                tok.describe(),
                self.peek().describe(),
                self.here(),
            ))
        }
    }

    fn ident(&mut self) -> ParseResult<String> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => Err(Parse_err(
                "identifier".to_string(),
                other.describe(),
                self.here(),
            )),
        }
    }

    fn fresh_name(&mut self, base: &str) -> String {
        if !self.used_names.contains(base) {
            self.used_names.insert(base.to_string());
            return base.to_string();
        }
        let mut n = 1;
        loop {
            let cand = format!("{base}{n}");
            if !self.used_names.contains(&cand) {
                self.used_names.insert(cand.clone());
                return cand;
            }
            n += 1;
        }
    }

    // ---- program structure ----

    fn program(&mut self) -> ParseResult<Program> {
        let mut domain = None;
        while let Tok::AtDomain(text) = self.peek().clone() {
            self.bump();
            domain = Some(DomainDecl { text });
        }
        let mut functions: Vec<FunDef> = Vec::new();
        let mut stmts = Vec::new();
        let mut pending_summary: Option<LoopSummary> = None;
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::AtSummary(text) => {
                    self.bump();
                    pending_summary = Some(parse_summary(&text)?);
                }
                Tok::AtDomain(text) => {
                    self.bump();
                    domain = Some(DomainDecl { text });
                }
                _ => {
                    if self.at_fundef() {
                        functions.push(self.fundef()?);
                    } else {
                        let s = self.stmt(&mut pending_summary)?;
                        stmts.push(s);
                    }
                }
            }
        }
        let body = Stmt::seq_all(stmts);
        let fun_map: HashMap<String, FunDef> =
            functions.iter().map(|f| (f.name.clone(), f.clone())).collect();
        let mut inliner = Inliner {
            functions: fun_map,
            parser: self,
            active: Vec::new(),
        };
        let body = inliner.inline_stmt(body)?;
        // inlining hoists declarations, which can nest sequences leftward;
        // re-normalize so printing and reparsing is stable
        let body = normalize_seqs(body);
        Ok(Program {
            body,
            functions,
            domain,
        })
    }

    fn at_fundef(&self) -> bool {
        // type keyword, identifier, then `(` begins a function definition
        if !matches!(
            self.peek(),
            Tok::KwInt | Tok::KwBool | Tok::KwString | Tok::KwUnit
        ) {
            return false;
        }
        let mut n = 1;
        // skip array suffix on the return type
        while *self.peek_at(n) == Tok::LBracket && *self.peek_at(n + 1) == Tok::RBracket {
            n += 2;
        }
        matches!(self.peek_at(n), Tok::Ident(_)) && *self.peek_at(n + 1) == Tok::LParen
    }

    fn fundef(&mut self) -> ParseResult<FunDef> {
        let ret = self.type_expr()?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let ty = self.type_expr()?;
                let pname = self.ident()?;
                params.push((ty, pname));
                if !self.eat(Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let mut locals = Vec::new();
        loop {
            if self.eat(Tok::KwReturn) {
                break;
            }
            let ty = self.type_expr()?;
            let lname = self.ident()?;
            self.expect(Tok::Assign)?;
            let e = self.expr()?;
            self.expect(Tok::Semi)?;
            locals.push((ty, lname, e));
        }
        let body = self.expr()?;
        self.expect(Tok::Semi)?;
        self.expect(Tok::RBrace)?;
        Ok(FunDef {
            ret,
            name,
            params,
            locals,
            body,
        })
    }

    fn type_expr(&mut self) -> ParseResult<Type> {
        let base = match self.bump() {
            Tok::KwInt => Type::Int,
            Tok::KwBool => Type::Bool,
            Tok::KwString => Type::Str,
            Tok::KwUnit => Type::Unit,
            Tok::KwHashtable => {
                self.expect(Tok::LBracket)?;
                let k = self.type_expr()?;
                self.expect(Tok::Comma)?;
                let v = self.type_expr()?;
                self.expect(Tok::RBracket)?;
                Type::Hashtable(Box::new(k), Box::new(v))
            }
            other => {
                return Err(Parse_err(
                    "type".to_string(),
                    other.describe(),
                    self.here(),
                ))
            }
        };
        if *self.peek() == Tok::LBracket && *self.peek_at(1) == Tok::RBracket {
            self.bump();
            self.bump();
            Ok(Type::Array(Box::new(base)))
        } else {
            Ok(base)
        }
    }

    fn at_type(&self) -> bool {
        matches!(
            self.peek(),
            Tok::KwInt | Tok::KwBool | Tok::KwString | Tok::KwUnit | Tok::KwHashtable
        )
    }

    // ---- statements ----

    fn block(&mut self) -> ParseResult<Stmt> {
        self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        let mut pending_summary: Option<LoopSummary> = None;
        while *self.peek() != Tok::RBrace {
            if let Tok::AtSummary(text) = self.peek().clone() {
                self.bump();
                pending_summary = Some(parse_summary(&text)?);
                continue;
            }
            stmts.push(self.stmt(&mut pending_summary)?);
        }
        self.expect(Tok::RBrace)?;
        Ok(Stmt::seq_all(stmts))
    }

    fn stmt(&mut self, pending_summary: &mut Option<LoopSummary>) -> ParseResult<Stmt> {
        let summary = pending_summary.take();
        match self.peek().clone() {
            Tok::KwSkip => {
                self.bump();
                self.expect(Tok::Semi)?;
                Ok(Stmt::Skip)
            }
            Tok::KwIf => {
                self.bump();
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let then = self.block()?;
                let els = if self.eat(Tok::KwElse) {
                    if *self.peek() == Tok::KwIf {
                        let mut none = None;
                        self.stmt(&mut none)?
                    } else {
                        self.block()?
                    }
                } else {
                    Stmt::Skip
                };
                Ok(Stmt::If(cond, Box::new(then), Box::new(els)))
            }
            Tok::KwWhile => {
                self.bump();
                self.expect(Tok::LParen)?;
                let cond_pos = self.here();
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                if expr_has_user_call(&cond) {
                    return Err(ParseError::CallInLoopCondition { pos: cond_pos });
                }
                let body = self.block()?;
                Ok(Stmt::While(cond, Box::new(body), summary.map(Box::new)))
            }
            Tok::KwFor => {
                self.bump();
                self.expect(Tok::LParen)?;
                let mut decls = Vec::new();
                if *self.peek() != Tok::Semi {
                    loop {
                        let ty = self.type_expr()?;
                        let name = self.ident()?;
                        self.expect(Tok::Assign)?;
                        let e = self.expr()?;
                        decls.push((ty, name, e));
                        if !self.eat(Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(Tok::Semi)?;
                let cond_pos = self.here();
                let cond = if *self.peek() == Tok::Semi {
                    Expr::bool(true)
                } else {
                    self.expr()?
                };
                self.expect(Tok::Semi)?;
                if expr_has_user_call(&cond) {
                    return Err(ParseError::CallInLoopCondition { pos: cond_pos });
                }
                let update = if *self.peek() == Tok::RParen {
                    Stmt::Skip
                } else {
                    self.simple_assign()?
                };
                self.expect(Tok::RParen)?;
                let body = self.block()?;
                // desugar: decls; while (cond) { body; update }
                let decl_stmts: Vec<Stmt> = decls
                    .into_iter()
                    .map(|(t, n, e)| Stmt::Decl(t, n, e))
                    .collect();
                let looped = Stmt::While(
                    cond,
                    Box::new(Stmt::seq(body, update)),
                    summary.map(Box::new),
                );
                let mut all = decl_stmts;
                all.push(looped);
                Ok(Stmt::seq_all(all))
            }
            Tok::KwCommute | Tok::KwCommuteSeq | Tok::KwCommutePar => {
                let keyword = match self.bump() {
                    Tok::KwCommuteSeq => CommuteKeyword::Seq,
                    Tok::KwCommutePar => CommuteKeyword::Par,
                    _ => CommuteKeyword::Plain,
                };
                self.expect(Tok::LParen)?;
                let guard = if self.eat(Tok::Underscore) {
                    // placeholder guard, to be filled by inference
                    Expr::bool(true)
                } else {
                    self.expr()?
                };
                self.expect(Tok::RParen)?;
                let open = self.here();
                self.expect(Tok::LBrace)?;
                let mut fragments = Vec::new();
                while *self.peek() == Tok::LBrace {
                    fragments.push(self.block()?);
                }
                self.expect(Tok::RBrace)?;
                if fragments.len() != 2 {
                    return Err(ParseError::CommuteArity {
                        found: fragments.len(),
                        pos: open,
                    });
                }
                let right = fragments.pop().unwrap();
                let left = fragments.pop().unwrap();
                Ok(Stmt::Commute {
                    keyword,
                    guard,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            Tok::KwLock => {
                self.bump();
                self.expect(Tok::LParen)?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                Ok(Stmt::Lock(e))
            }
            Tok::KwUnlock => {
                self.bump();
                self.expect(Tok::LParen)?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                Ok(Stmt::Unlock(e))
            }
            Tok::KwHavoc => {
                self.bump();
                let mut names = vec![self.ident()?];
                while self.eat(Tok::Comma) {
                    names.push(self.ident()?);
                }
                self.expect(Tok::Semi)?;
                Ok(Stmt::Havoc(names))
            }
            Tok::KwAssume => {
                self.bump();
                self.expect(Tok::LParen)?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                Ok(Stmt::Assume(e))
            }
            Tok::LBrace => self.block(),
            _ if self.at_type() => {
                let ty = self.type_expr()?;
                let name = self.ident()?;
                self.expect(Tok::Assign)?;
                let e = self.expr()?;
                self.expect(Tok::Semi)?;
                Ok(Stmt::Decl(ty, name, e))
            }
            Tok::Ident(name) if name == "ht_put" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let table = self.expr()?;
                self.expect(Tok::Comma)?;
                let key = self.expr()?;
                self.expect(Tok::Comma)?;
                let val = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                let base = match table {
                    Expr::Var(v) => v,
                    _ => {
                        return Err(ParseError::Invalid {
                            message: "ht_put expects a table variable".to_string(),
                            pos: self.here(),
                        })
                    }
                };
                Ok(Stmt::Assign(LValue::Index(base, key), val))
            }
            Tok::Ident(_) => {
                let s = self.simple_assign()?;
                self.expect(Tok::Semi)?;
                Ok(s)
            }
            other => Err(Parse_err(
                "statement".to_string(),
                other.describe(),
                self.here(),
            )),
        }
    }

    /// `x = e` or `x[i] = e`, without the trailing semicolon.
    fn simple_assign(&mut self) -> ParseResult<Stmt> {
        let name = self.ident()?;
        let lval = if self.eat(Tok::LBracket) {
            let idx = self.expr()?;
            self.expect(Tok::RBracket)?;
            LValue::Index(name, idx)
        } else {
            LValue::Var(name)
        };
        self.expect(Tok::Assign)?;
        let e = self.expr()?;
        Ok(Stmt::Assign(lval, e))
    }

    // ---- expressions ----

    fn expr(&mut self) -> ParseResult<Expr> {
        self.ternary()
    }

    fn ternary(&mut self) -> ParseResult<Expr> {
        let cond = self.or_expr()?;
        if self.eat(Tok::Question) {
            let then = self.ternary()?;
            self.expect(Tok::Colon)?;
            let els = self.ternary()?;
            Ok(Expr::Ternary(Box::new(cond), Box::new(then), Box::new(els)))
        } else {
            Ok(cond)
        }
    }

    fn or_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat(Tok::OrOr) {
            let rhs = self.and_expr()?;
            lhs = Expr::binop(lhs, BinOp::Or, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.cmp_expr()?;
        while self.eat(Tok::AndAnd) {
            let rhs = self.cmp_expr()?;
            lhs = Expr::binop(lhs, BinOp::And, rhs);
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> ParseResult<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::EqEq => Some(BinOp::Eq),
            Tok::NotEq => Some(BinOp::Ne),
            Tok::Lt => Some(BinOp::Lt),
            Tok::Le => Some(BinOp::Le),
            Tok::Gt => Some(BinOp::Gt),
            Tok::Ge => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let rhs = self.add_expr()?;
            Ok(Expr::binop(lhs, op, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn add_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::binop(lhs, op, rhs);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Mod,
                _ => break,
            };
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = Expr::binop(lhs, op, rhs);
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> ParseResult<Expr> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                let e = self.unary_expr()?;
                // fold literal negation so -1 and its printed form agree
                if let Expr::Const(Value::Int(n)) = e {
                    return Ok(Expr::int(n.wrapping_neg()));
                }
                Ok(Expr::Unop(UnOp::Neg, Box::new(e)))
            }
            Tok::Bang => {
                self.bump();
                let e = self.unary_expr()?;
                Ok(Expr::Unop(UnOp::Not, Box::new(e)))
            }
            _ => self.postfix_expr(),
        }
    }

    fn postfix_expr(&mut self) -> ParseResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.eat(Tok::LBracket) {
                let idx = self.expr()?;
                self.expect(Tok::RBracket)?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else if self.eat(Tok::Dot) {
                let field = self.ident()?;
                e = Expr::Field(Box::new(e), field);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> ParseResult<Expr> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::int(n))
            }
            Tok::KwTrue => {
                self.bump();
                Ok(Expr::bool(true))
            }
            Tok::KwFalse => {
                self.bump();
                Ok(Expr::bool(false))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Const(Value::Str(s)))
            }
            Tok::LParen => {
                self.bump();
                if self.eat(Tok::RParen) {
                    return Ok(Expr::Const(Value::Unit));
                }
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::KwNew => {
                self.bump();
                if self.eat(Tok::KwHashtable) {
                    self.expect(Tok::LBracket)?;
                    let k = self.type_expr()?;
                    self.expect(Tok::Comma)?;
                    let v = self.type_expr()?;
                    self.expect(Tok::RBracket)?;
                    Ok(Expr::NewHashtable(k, v))
                } else {
                    let elem = match self.bump() {
                        Tok::KwInt => Type::Int,
                        Tok::KwBool => Type::Bool,
                        Tok::KwString => Type::Str,
                        other => {
                            return Err(Parse_err(
                                "element type".to_string(),
                                other.describe(),
                                self.here(),
                            ))
                        }
                    };
                    self.expect(Tok::LBracket)?;
                    let len = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    Ok(Expr::NewArray(elem, Box::new(len)))
                }
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat(Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    if name == "ht_get" {
                        if args.len() != 2 {
                            return Err(ParseError::Invalid {
                                message: "ht_get takes a table and a key".to_string(),
                                pos: self.here(),
                            });
                        }
                        let key = args.pop().unwrap();
                        let table = args.pop().unwrap();
                        return Ok(Expr::Index(Box::new(table), Box::new(key)));
                    }
                    if name == "deref" {
                        if args.len() != 1 {
                            return Err(ParseError::Invalid {
                                message: "deref takes one argument".to_string(),
                                pos: self.here(),
                            });
                        }
                        return Ok(Expr::Deref(Box::new(args.pop().unwrap())));
                    }
                    if name == "old" && !self.allow_old {
                        return Err(ParseError::Invalid {
                            message: "old(..) is only allowed inside @summary annotations"
                                .to_string(),
                            pos: self.here(),
                        });
                    }
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            other => Err(Parse_err(
                "expression".to_string(),
                other.describe(),
                self.here(),
            )),
        }
    }
}

#[allow(non_snake_case)]
fn Parse_err(expected: String, found: String, pos: Pos) -> ParseError {
    ParseError::Unexpected {
        expected,
        found,
        pos,
    }
}

fn expr_has_user_call(e: &Expr) -> bool {
    match e {
        Expr::Call(name, args) => {
            (!is_builtin_call(name) && name != "old" && name != "ht_get" && name != "deref")
                || args.iter().any(expr_has_user_call)
        }
        Expr::Const(_) | Expr::Var(_) | Expr::NewHashtable(_, _) => false,
        Expr::Deref(e) | Expr::Unop(_, e) | Expr::NewArray(_, e) | Expr::Field(e, _) => {
            expr_has_user_call(e)
        }
        Expr::Index(a, b) | Expr::Binop(a, _, b) => {
            expr_has_user_call(a) || expr_has_user_call(b)
        }
        Expr::Ternary(c, a, b) => {
            expr_has_user_call(c) || expr_has_user_call(a) || expr_has_user_call(b)
        }
    }
}

/// Parse the body of a `@summary` annotation: `modifies x, y: <relation>`.
pub fn parse_summary(text: &str) -> ParseResult<LoopSummary> {
    let rest = text
        .strip_prefix("modifies")
        .ok_or_else(|| ParseError::BadSummary("expected `modifies <vars>: <relation>`".into()))?;
    let (vars_part, rel_part) = rest
        .split_once(':')
        .ok_or_else(|| ParseError::BadSummary("missing `:` before the relation".into()))?;
    let modifies: Vec<String> = vars_part
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if modifies.is_empty() {
        return Err(ParseError::BadSummary("empty modifies list".into()));
    }
    let relation = parse_expression(rel_part.trim())?;
    Ok(LoopSummary { modifies, relation })
}

// ---- call inlining ----

struct Inliner<'a> {
    functions: HashMap<String, FunDef>,
    parser: &'a mut Parser,
    active: Vec<String>,
}

impl<'a> Inliner<'a> {
    fn inline_stmt(&mut self, s: Stmt) -> ParseResult<Stmt> {
        Ok(match s {
            Stmt::Skip => Stmt::Skip,
            Stmt::Seq(a, b) => Stmt::seq(self.inline_stmt(*a)?, self.inline_stmt(*b)?),
            Stmt::Assign(lv, e) => {
                let mut prelude = Vec::new();
                let lv = match lv {
                    LValue::Var(v) => LValue::Var(v),
                    LValue::Index(base, idx) => {
                        LValue::Index(base, self.inline_expr(idx, &mut prelude)?)
                    }
                };
                let e = self.inline_expr(e, &mut prelude)?;
                prelude.push(Stmt::Assign(lv, e));
                Stmt::seq_all(prelude)
            }
            Stmt::Decl(t, n, e) => {
                let mut prelude = Vec::new();
                let e = self.inline_expr(e, &mut prelude)?;
                prelude.push(Stmt::Decl(t, n, e));
                Stmt::seq_all(prelude)
            }
            Stmt::If(c, t, e) => {
                let mut prelude = Vec::new();
                let c = self.inline_expr(c, &mut prelude)?;
                let stmt = Stmt::If(
                    c,
                    Box::new(self.inline_stmt(*t)?),
                    Box::new(self.inline_stmt(*e)?),
                );
                prelude.push(stmt);
                Stmt::seq_all(prelude)
            }
            Stmt::While(c, b, summary) => {
                // loop conditions were already checked to be call-free
                Stmt::While(c, Box::new(self.inline_stmt(*b)?), summary)
            }
            Stmt::For(..) => unreachable!("for loops desugar before inlining"),
            Stmt::Commute {
                keyword,
                guard,
                left,
                right,
            } => {
                let mut prelude = Vec::new();
                let guard = self.inline_expr(guard, &mut prelude)?;
                let stmt = Stmt::Commute {
                    keyword,
                    guard,
                    left: Box::new(self.inline_stmt(*left)?),
                    right: Box::new(self.inline_stmt(*right)?),
                };
                prelude.push(stmt);
                Stmt::seq_all(prelude)
            }
            Stmt::Lock(e) => Stmt::Lock(e),
            Stmt::Unlock(e) => Stmt::Unlock(e),
            Stmt::Havoc(ns) => Stmt::Havoc(ns),
            Stmt::Assume(e) => {
                let mut prelude = Vec::new();
                let e = self.inline_expr(e, &mut prelude)?;
                prelude.push(Stmt::Assume(e));
                Stmt::seq_all(prelude)
            }
        })
    }

    /// Rewrite calls inside `e`; function-argument and local bindings are
    /// hoisted into `prelude` with fresh names. Calls are pure, so eager
    /// hoisting out of ternaries is unobservable.
    fn inline_expr(&mut self, e: Expr, prelude: &mut Vec<Stmt>) -> ParseResult<Expr> {
        Ok(match e {
            Expr::Call(name, args) if !is_builtin_call(&name) => {
                let args = args
                    .into_iter()
                    .map(|a| self.inline_expr(a, prelude))
                    .collect::<ParseResult<Vec<_>>>()?;
                let fun = match self.functions.get(&name) {
                    Some(f) => f.clone(),
                    None => {
                        return Err(ParseError::UnknownFunction {
                            name,
                            pos: Pos { line: 0, col: 0 },
                        })
                    }
                };
                if self.active.contains(&name) {
                    return Err(ParseError::RecursiveCall {
                        name,
                        pos: Pos { line: 0, col: 0 },
                    });
                }
                if fun.params.len() != args.len() {
                    return Err(ParseError::Invalid {
                        message: format!(
                            "`{name}` takes {} argument(s), got {}",
                            fun.params.len(),
                            args.len()
                        ),
                        pos: Pos { line: 0, col: 0 },
                    });
                }
                self.active.push(name.clone());
                let mut renames: HashMap<String, String> = HashMap::new();
                for ((pty, pname), arg) in fun.params.iter().zip(args) {
                    let fresh = self.parser.fresh_name(&format!("{name}_{pname}"));
                    renames.insert(pname.clone(), fresh.clone());
                    prelude.push(Stmt::Decl(pty.clone(), fresh, arg));
                }
                for (lty, lname, lexpr) in &fun.locals {
                    let bound = rename_vars(lexpr.clone(), &renames);
                    let bound = self.inline_expr(bound, prelude)?;
                    let fresh = self.parser.fresh_name(&format!("{name}_{lname}"));
                    renames.insert(lname.clone(), fresh.clone());
                    prelude.push(Stmt::Decl(lty.clone(), fresh, bound));
                }
                let body = rename_vars(fun.body.clone(), &renames);
                let body = self.inline_expr(body, prelude)?;
                self.active.pop();
                body
            }
            Expr::Call(name, args) => {
                let args = args
                    .into_iter()
                    .map(|a| self.inline_expr(a, prelude))
                    .collect::<ParseResult<Vec<_>>>()?;
                Expr::Call(name, args)
            }
            Expr::Const(_) | Expr::Var(_) | Expr::NewHashtable(_, _) => e,
            Expr::Deref(e) => Expr::Deref(Box::new(self.inline_expr(*e, prelude)?)),
            Expr::Unop(op, e) => Expr::Unop(op, Box::new(self.inline_expr(*e, prelude)?)),
            Expr::NewArray(t, e) => Expr::NewArray(t, Box::new(self.inline_expr(*e, prelude)?)),
            Expr::Field(e, f) => Expr::Field(Box::new(self.inline_expr(*e, prelude)?), f),
            Expr::Index(a, b) => Expr::Index(
                Box::new(self.inline_expr(*a, prelude)?),
                Box::new(self.inline_expr(*b, prelude)?),
            ),
            Expr::Binop(a, op, b) => Expr::Binop(
                Box::new(self.inline_expr(*a, prelude)?),
                op,
                Box::new(self.inline_expr(*b, prelude)?),
            ),
            Expr::Ternary(c, a, b) => Expr::Ternary(
                Box::new(self.inline_expr(*c, prelude)?),
                Box::new(self.inline_expr(*a, prelude)?),
                Box::new(self.inline_expr(*b, prelude)?),
            ),
        })
    }
}

/// Right-nest sequence trees and drop redundant skips, recursively.
pub fn normalize_seqs(s: Stmt) -> Stmt {
    match s {
        Stmt::Seq(..) => {
            let parts: Vec<Stmt> = s
                .flatten()
                .into_iter()
                .map(|st| normalize_seqs(st.clone()))
                .collect();
            Stmt::seq_all(parts)
        }
        Stmt::If(c, t, e) => Stmt::If(
            c,
            Box::new(normalize_seqs(*t)),
            Box::new(normalize_seqs(*e)),
        ),
        Stmt::While(c, b, sm) => Stmt::While(c, Box::new(normalize_seqs(*b)), sm),
        Stmt::Commute {
            keyword,
            guard,
            left,
            right,
        } => Stmt::Commute {
            keyword,
            guard,
            left: Box::new(normalize_seqs(*left)),
            right: Box::new(normalize_seqs(*right)),
        },
        other => other,
    }
}

/// Capture-free variable renaming used by the inliner (all targets fresh).
pub fn rename_vars(e: Expr, renames: &HashMap<String, String>) -> Expr {
    match e {
        Expr::Var(v) => match renames.get(&v) {
            Some(n) => Expr::Var(n.clone()),
            None => Expr::Var(v),
        },
        Expr::Const(_) | Expr::NewHashtable(_, _) => e,
        Expr::Deref(e) => Expr::Deref(Box::new(rename_vars(*e, renames))),
        Expr::Unop(op, e) => Expr::Unop(op, Box::new(rename_vars(*e, renames))),
        Expr::NewArray(t, e) => Expr::NewArray(t, Box::new(rename_vars(*e, renames))),
        Expr::Field(e, f) => Expr::Field(Box::new(rename_vars(*e, renames)), f),
        Expr::Index(a, b) => Expr::Index(
            Box::new(rename_vars(*a, renames)),
            Box::new(rename_vars(*b, renames)),
        ),
        Expr::Binop(a, op, b) => Expr::Binop(
            Box::new(rename_vars(*a, renames)),
            op,
            Box::new(rename_vars(*b, renames)),
        ),
        Expr::Ternary(c, a, b) => Expr::Ternary(
            Box::new(rename_vars(*c, renames)),
            Box::new(rename_vars(*a, renames)),
            Box::new(rename_vars(*b, renames)),
        ),
        Expr::Call(n, args) => Expr::Call(
            n,
            args.into_iter().map(|a| rename_vars(a, renames)).collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Program {
        parse_program(src).expect("parse failed")
    }

    #[test]
    fn parses_commute_with_two_fragments() {
        let p = parse("commute(true){ { c = c - x; } { c = c + y; } }");
        match &p.body {
            Stmt::Commute {
                guard, left, right, ..
            } => {
                assert_eq!(guard, &Expr::bool(true));
                assert_eq!(
                    **left,
                    Stmt::Assign(
                        LValue::Var("c".into()),
                        Expr::binop(Expr::var("c"), BinOp::Sub, Expr::var("x"))
                    )
                );
                assert_eq!(
                    **right,
                    Stmt::Assign(
                        LValue::Var("c".into()),
                        Expr::binop(Expr::var("c"), BinOp::Add, Expr::var("y"))
                    )
                );
            }
            other => panic!("expected commute, got {other:?}"),
        }
    }

    #[test]
    fn skip_parses_to_skip() {
        assert_eq!(parse("skip;").body, Stmt::Skip);
    }

    #[test]
    fn rejects_three_fragments() {
        let err = parse_program("commute(c>0){ {x=1;} {y=2;} {z=3;} }").unwrap_err();
        assert!(matches!(err[0], ParseError::CommuteArity { found: 3, .. }));
    }

    #[test]
    fn rejects_one_fragment() {
        let err = parse_program("commute(true){ {x=1;} }").unwrap_err();
        assert!(matches!(err[0], ParseError::CommuteArity { found: 1, .. }));
    }

    #[test]
    fn for_desugars_to_while() {
        let p = parse("for (int i = 0; i < 3; i = i + 1) { skip; }");
        let flat = p.body.flatten();
        assert!(matches!(flat[0], Stmt::Decl(Type::Int, n, _) if n == "i"));
        match flat[1] {
            Stmt::While(_, body, _) => {
                // update lands at the end of the body
                let inner = body.flatten();
                assert!(matches!(
                    inner.last().unwrap(),
                    Stmt::Assign(LValue::Var(n), _) if n == "i"
                ));
            }
            other => panic!("expected while, got {other:?}"),
        }
    }

    #[test]
    fn inlines_calls_with_fresh_locals() {
        let p = parse(
            "int foo(int a) { int s = a * a; return s + 1; }\n\
             int t = 0;\n\
             t = foo(2);",
        );
        let flat = p.body.flatten();
        // decl t, decl foo_a, decl foo_s, assign t
        assert_eq!(flat.len(), 4);
        assert!(matches!(flat[1], Stmt::Decl(Type::Int, n, _) if n == "foo_a"));
        assert!(matches!(flat[2], Stmt::Decl(Type::Int, n, _) if n == "foo_s"));
        match flat[3] {
            Stmt::Assign(LValue::Var(n), e) => {
                assert_eq!(n, "t");
                assert_eq!(
                    *e,
                    Expr::binop(Expr::var("foo_s"), BinOp::Add, Expr::int(1))
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_recursion() {
        let err = parse_program("int f(int n) { return f(n); } int x = f(1);").unwrap_err();
        assert!(matches!(err[0], ParseError::RecursiveCall { .. }));
    }

    #[test]
    fn summary_attaches_to_next_while() {
        let p = parse(
            "int x = 0; int y = 2;\n\
             // @summary modifies x, y: y == 0 && x == old(x) + old(y)\n\
             while (y > 0) { x = x + 1; y = y - 1; }",
        );
        let flat = p.body.flatten();
        match flat[2] {
            Stmt::While(_, _, Some(summary)) => {
                assert_eq!(summary.modifies, vec!["x".to_string(), "y".to_string()]);
            }
            other => panic!("expected annotated while, got {other:?}"),
        }
    }

    #[test]
    fn ht_sugar_forms() {
        let p = parse(
            "hashtable[int,int] t = new hashtable[int,int];\n\
             t[1] = 5;\n\
             ht_put(t, 2, 6);\n\
             int y = ht_get(t, 1);\n\
             bool m = ht_mem(t, 1);\n\
             int s = ht_size(t);",
        );
        let flat = p.body.flatten();
        assert!(matches!(flat[1], Stmt::Assign(LValue::Index(n, _), _) if n == "t"));
        assert!(matches!(flat[2], Stmt::Assign(LValue::Index(n, _), _) if n == "t"));
        assert!(matches!(flat[3], Stmt::Decl(_, _, Expr::Index(_, _))));
        assert!(matches!(flat[4], Stmt::Decl(_, _, Expr::Call(n, _)) if n == "ht_mem"));
        assert!(matches!(flat[5], Stmt::Decl(_, _, Expr::Call(n, _)) if n == "ht_size"));
    }
}
