//! Logical terms and their SMT-LIB v2 rendering. The term language covers
//! what the embedding emits: boolean structure, ite, applications,
//! let-chains, and existentials. Rendering is deterministic so identical
//! sites produce byte-identical queries.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Sort {
    Int,
    Bool,
    Str,
    /// SMT array; sets are arrays to Bool.
    Arr(Box<Sort>, Box<Sort>),
}

impl Sort {
    pub fn render(&self) -> String {
        match self {
            Sort::Int => "Int".to_string(),
            Sort::Bool => "Bool".to_string(),
            Sort::Str => "String".to_string(),
            Sort::Arr(k, v) => format!("(Array {} {})", k.render(), v.render()),
        }
    }

    /// The value an absent table key reads.
    pub fn default_literal(&self) -> Formula {
        match self {
            Sort::Int => Formula::IntLit(0),
            Sort::Bool => Formula::False,
            Sort::Str => Formula::StrLit(String::new()),
            Sort::Arr(..) => Formula::False,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    IntLit(i64),
    StrLit(String),
    Sym(String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Ite(Box<Formula>, Box<Formula>, Box<Formula>),
    App(String, Vec<Formula>),
    Let(Vec<(String, Formula)>, Box<Formula>),
    Exists(Vec<(String, Sort)>, Box<Formula>),
}

impl Formula {
    pub fn sym(s: impl Into<String>) -> Formula {
        Formula::Sym(s.into())
    }

    pub fn eq(a: Formula, b: Formula) -> Formula {
        Formula::App("=".to_string(), vec![a, b])
    }

    pub fn select(arr: Formula, idx: Formula) -> Formula {
        Formula::App("select".to_string(), vec![arr, idx])
    }

    pub fn store(arr: Formula, idx: Formula, val: Formula) -> Formula {
        Formula::App("store".to_string(), vec![arr, idx, val])
    }

    pub fn ite(c: Formula, t: Formula, e: Formula) -> Formula {
        Formula::Ite(Box::new(c), Box::new(t), Box::new(e))
    }

    pub fn and(items: Vec<Formula>) -> Formula {
        let items: Vec<Formula> = items
            .into_iter()
            .filter(|f| !matches!(f, Formula::True))
            .collect();
        match items.len() {
            0 => Formula::True,
            1 => items.into_iter().next().unwrap(),
            _ => Formula::And(items),
        }
    }

    pub fn negate(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut String) {
        match self {
            Formula::True => out.push_str("true"),
            Formula::False => out.push_str("false"),
            Formula::IntLit(n) => {
                if *n < 0 {
                    // SMT-LIB has no negative literals
                    let _ = write!(out, "(- {})", n.unsigned_abs());
                } else {
                    let _ = write!(out, "{n}");
                }
            }
            Formula::StrLit(s) => {
                out.push('"');
                for c in s.chars() {
                    if c == '"' {
                        out.push_str("\"\"");
                    } else {
                        out.push(c);
                    }
                }
                out.push('"');
            }
            Formula::Sym(s) => out.push_str(s),
            Formula::Not(f) => {
                out.push_str("(not ");
                f.write(out);
                out.push(')');
            }
            Formula::And(items) => write_app(out, "and", items),
            Formula::Or(items) => write_app(out, "or", items),
            Formula::Ite(c, t, e) => {
                out.push_str("(ite ");
                c.write(out);
                out.push(' ');
                t.write(out);
                out.push(' ');
                e.write(out);
                out.push(')');
            }
            Formula::App(f, args) => write_app(out, f, args),
            Formula::Let(binds, body) => {
                out.push_str("(let (");
                for (i, (name, value)) in binds.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "({name} ");
                    value.write(out);
                    out.push(')');
                }
                out.push_str(") ");
                body.write(out);
                out.push(')');
            }
            Formula::Exists(vars, body) => {
                out.push_str("(exists (");
                for (i, (name, sort)) in vars.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "({name} {})", sort.render());
                }
                out.push_str(") ");
                body.write(out);
                out.push(')');
            }
        }
    }
}

fn write_app(out: &mut String, f: &str, args: &[Formula]) {
    if args.is_empty() {
        out.push_str(f);
        return;
    }
    out.push('(');
    out.push_str(f);
    for a in args {
        out.push(' ');
        a.write(out);
    }
    out.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_nested_terms() {
        let f = Formula::Let(
            vec![("c_0".to_string(), Formula::sym("c"))],
            Box::new(Formula::ite(
                Formula::App(">".into(), vec![Formula::sym("c_0"), Formula::IntLit(0)]),
                Formula::eq(Formula::sym("c_new"), Formula::IntLit(-1)),
                Formula::True,
            )),
        );
        assert_eq!(
            f.render(),
            "(let ((c_0 c)) (ite (> c_0 0) (= c_new (- 1)) true))"
        );
    }

    #[test]
    fn and_flattens_trivia() {
        assert_eq!(Formula::and(vec![]).render(), "true");
        assert_eq!(
            Formula::and(vec![Formula::True, Formula::sym("p")]).render(),
            "p"
        );
    }
}
