//! Tokenizer for the source language. Ordinary comments are dropped;
//! `@domain` and `@summary` annotation comments become tokens so the parser
//! can attach them to the program header and to loops.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    // keywords
    KwInt,
    KwBool,
    KwString,
    KwUnit,
    KwSkip,
    KwIf,
    KwElse,
    KwWhile,
    KwFor,
    KwCommute,
    KwCommuteSeq,
    KwCommutePar,
    KwLock,
    KwUnlock,
    KwHavoc,
    KwAssume,
    KwNew,
    KwHashtable,
    KwTrue,
    KwFalse,
    KwReturn,
    // punctuation and operators
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Colon,
    Dot,
    Question,
    Assign,
    Underscore,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    // annotation comments
    AtDomain(String),
    AtSummary(String),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::KwInt => "int",
            Tok::KwBool => "bool",
            Tok::KwString => "string",
            Tok::KwUnit => "unit",
            Tok::KwSkip => "skip",
            Tok::KwIf => "if",
            Tok::KwElse => "else",
            Tok::KwWhile => "while",
            Tok::KwFor => "for",
            Tok::KwCommute => "commute",
            Tok::KwCommuteSeq => "commute_seq",
            Tok::KwCommutePar => "commute_par",
            Tok::KwLock => "lock",
            Tok::KwUnlock => "unlock",
            Tok::KwHavoc => "havoc",
            Tok::KwAssume => "assume",
            Tok::KwNew => "new",
            Tok::KwHashtable => "hashtable",
            Tok::KwTrue => "true",
            Tok::KwFalse => "false",
            Tok::KwReturn => "return",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Semi => ";",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Dot => ".",
            Tok::Question => "?",
            Tok::Assign => "=",
            Tok::Underscore => "_",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Bang => "!",
            Tok::AtDomain(_) => "@domain annotation",
            Tok::AtSummary(_) => "@summary annotation",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LexError {
    #[error("{pos}: unexpected character `{ch}`")]
    UnexpectedChar { ch: char, pos: Pos },
    #[error("{pos}: unterminated string literal")]
    UnterminatedString { pos: Pos },
    #[error("{pos}: integer literal out of range")]
    IntOutOfRange { pos: Pos },
}

pub fn lex(source: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! pos {
        () => {
            Pos { line, col }
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let start = pos!();
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '/' if i + 1 < chars.len() && chars[i + 1] == '/' => {
                let mut j = i + 2;
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                let comment: String = chars[i + 2..j].iter().collect();
                let trimmed = comment.trim();
                if let Some(rest) = trimmed.strip_prefix("@domain") {
                    tokens.push(Token {
                        tok: Tok::AtDomain(rest.trim().to_string()),
                        pos: start,
                    });
                } else if let Some(rest) = trimmed.strip_prefix("@summary") {
                    tokens.push(Token {
                        tok: Tok::AtSummary(rest.trim().to_string()),
                        pos: start,
                    });
                }
                col += j - i;
                i = j;
            }
            '/' if i + 1 < chars.len() && chars[i + 1] == '*' => {
                let mut j = i + 2;
                while j + 1 < chars.len() && !(chars[j] == '*' && chars[j + 1] == '/') {
                    if chars[j] == '\n' {
                        line += 1;
                        col = 1;
                    } else {
                        col += 1;
                    }
                    j += 1;
                }
                i = (j + 2).min(chars.len());
            }
            '"' => {
                let mut j = i + 1;
                let mut s = String::new();
                let mut closed = false;
                while j < chars.len() {
                    match chars[j] {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' if j + 1 < chars.len() => {
                            let esc = chars[j + 1];
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                            j += 2;
                        }
                        '\n' => break,
                        ch => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                if !closed {
                    return Err(LexError::UnterminatedString { pos: start });
                }
                tokens.push(Token {
                    tok: Tok::Str(s),
                    pos: start,
                });
                col += j + 1 - i;
                i = j + 1;
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let n: i64 = text
                    .parse()
                    .map_err(|_| LexError::IntOutOfRange { pos: start })?;
                tokens.push(Token {
                    tok: Tok::Int(n),
                    pos: start,
                });
                col += j - i;
                i = j;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "int" => Tok::KwInt,
                    "bool" => Tok::KwBool,
                    "string" => Tok::KwString,
                    "unit" => Tok::KwUnit,
                    "skip" => Tok::KwSkip,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    "while" => Tok::KwWhile,
                    "for" => Tok::KwFor,
                    "commute" => Tok::KwCommute,
                    "commute_seq" => Tok::KwCommuteSeq,
                    "commute_par" => Tok::KwCommutePar,
                    "lock" => Tok::KwLock,
                    "unlock" => Tok::KwUnlock,
                    "havoc" => Tok::KwHavoc,
                    "assume" => Tok::KwAssume,
                    "new" => Tok::KwNew,
                    "hashtable" => Tok::KwHashtable,
                    "true" => Tok::KwTrue,
                    "false" => Tok::KwFalse,
                    "return" => Tok::KwReturn,
                    "_" => Tok::Underscore,
                    _ => Tok::Ident(word),
                };
                tokens.push(Token { tok, pos: start });
                col += j - i;
                i = j;
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let (tok, len) = match two.as_str() {
                    "==" => (Tok::EqEq, 2),
                    "!=" => (Tok::NotEq, 2),
                    "<=" => (Tok::Le, 2),
                    ">=" => (Tok::Ge, 2),
                    "&&" => (Tok::AndAnd, 2),
                    "||" => (Tok::OrOr, 2),
                    _ => {
                        let tok = match c {
                            '(' => Tok::LParen,
                            ')' => Tok::RParen,
                            '{' => Tok::LBrace,
                            '}' => Tok::RBrace,
                            '[' => Tok::LBracket,
                            ']' => Tok::RBracket,
                            ';' => Tok::Semi,
                            ',' => Tok::Comma,
                            ':' => Tok::Colon,
                            '.' => Tok::Dot,
                            '?' => Tok::Question,
                            '=' => Tok::Assign,
                            '+' => Tok::Plus,
                            '-' => Tok::Minus,
                            '*' => Tok::Star,
                            '/' => Tok::Slash,
                            '%' => Tok::Percent,
                            '<' => Tok::Lt,
                            '>' => Tok::Gt,
                            '!' => Tok::Bang,
                            other => {
                                return Err(LexError::UnexpectedChar {
                                    ch: other,
                                    pos: start,
                                })
                            }
                        };
                        (tok, 1)
                    }
                };
                tokens.push(Token { tok, pos: start });
                i += len;
                col += len;
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        pos: pos!(),
    });
    Ok(tokens)
}
