//! External SMT solver integration. Queries are written to temp files and a
//! configurable solver command is invoked on them; the toolkit never links
//! a solver. `COMMUTE_SMT_SOLVER` overrides discovery (e.g. "z3" or
//! "cvc5 --produce-models").

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub argv: Vec<String>,
    pub timeout: Duration,
}

impl SolverConfig {
    pub fn from_command(cmd: &str) -> Option<SolverConfig> {
        let argv: Vec<String> = cmd.split_whitespace().map(|s| s.to_string()).collect();
        if argv.is_empty() {
            None
        } else {
            Some(SolverConfig {
                argv,
                timeout: Duration::from_secs(30),
            })
        }
    }

    /// Environment override, then PATH probe for the usual suspects.
    pub fn discover() -> Option<SolverConfig> {
        if let Ok(cmd) = std::env::var("COMMUTE_SMT_SOLVER") {
            if !cmd.trim().is_empty() {
                return SolverConfig::from_command(&cmd);
            }
        }
        for (probe, argv) in [
            ("z3", vec!["z3"]),
            ("cvc5", vec!["cvc5", "--produce-models"]),
            ("cvc4", vec!["cvc4", "--produce-models", "--lang", "smt2"]),
        ] {
            let ok = Command::new(probe)
                .arg("--version")
                .output()
                .map(|o| o.status.success())
                .unwrap_or(false);
            if ok {
                return Some(SolverConfig {
                    argv: argv.into_iter().map(|s| s.to_string()).collect(),
                    timeout: Duration::from_secs(30),
                });
            }
        }
        None
    }
}

#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error("failed to run solver: {0}")]
    Spawn(String),
    #[error("solver produced no sat/unsat/unknown answer: {0}")]
    BadOutput(String),
}

/// Scalar model values decoded from `get-model` output.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelValue {
    Int(i64),
    Bool(bool),
    Str(String),
    Opaque(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverOutcome {
    Unsat,
    Sat(BTreeMap<String, ModelValue>),
    Unknown(String),
}

/// Run a query (full SMT-LIB text) through the configured solver.
pub fn run_query(config: &SolverConfig, query: &str) -> Result<SolverOutcome, SolverError> {
    let mut file = tempfile::Builder::new()
        .prefix("commute-query-")
        .suffix(".smt2")
        .tempfile()
        .map_err(|e| SolverError::Spawn(e.to_string()))?;
    file.write_all(query.as_bytes())
        .map_err(|e| SolverError::Spawn(e.to_string()))?;
    let path = file.path().to_path_buf();

    let (prog, args) = config.argv.split_first().expect("nonempty argv");
    let output = Command::new(prog)
        .args(args)
        .arg(&path)
        .output()
        .map_err(|e| SolverError::Spawn(format!("{prog}: {e}")))?;
    let stdout = String::from_utf8_lossy(&output.stdout).to_string();
    let mut lines = stdout.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some("unsat") => Ok(SolverOutcome::Unsat),
        Some("sat") => {
            let rest: String = stdout
                .split_once("sat")
                .map(|x| x.1)
                .unwrap_or("")
                .to_string();
            Ok(SolverOutcome::Sat(parse_model(&rest)))
        }
        Some("unknown") => Ok(SolverOutcome::Unknown(
            lines.next().unwrap_or("").to_string(),
        )),
        other => Err(SolverError::BadOutput(format!(
            "{:?} (stderr: {})",
            other,
            String::from_utf8_lossy(&output.stderr)
        ))),
    }
}

// ---- s-expression model parsing ----

#[derive(Debug, Clone, PartialEq)]
enum SExp {
    Atom(String),
    Str(String),
    List(Vec<SExp>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' | ')' => tokens.push(c.to_string()),
            '"' => {
                let mut s = String::from("\"");
                while let Some(c2) = chars.next() {
                    s.push(c2);
                    if c2 == '"' {
                        if chars.peek() == Some(&'"') {
                            chars.next();
                            s.push('"');
                        } else {
                            break;
                        }
                    }
                }
                tokens.push(s);
            }
            ';' => {
                for c2 in chars.by_ref() {
                    if c2 == '\n' {
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {}
            c => {
                let mut s = c.to_string();
                while let Some(&c2) = chars.peek() {
                    if c2.is_whitespace() || c2 == '(' || c2 == ')' {
                        break;
                    }
                    s.push(c2);
                    chars.next();
                }
                tokens.push(s);
            }
        }
    }
    tokens
}

fn parse_sexps(tokens: &[String]) -> Vec<SExp> {
    let mut stack: Vec<Vec<SExp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().unwrap_or_default();
                if let Some(top) = stack.last_mut() {
                    top.push(SExp::List(done));
                }
            }
            _ => {
                let atom = if t.starts_with('"') {
                    let inner = t.trim_matches('"').replace("\"\"", "\"");
                    SExp::Str(inner)
                } else {
                    SExp::Atom(t.clone())
                };
                if let Some(top) = stack.last_mut() {
                    top.push(atom);
                }
            }
        }
    }
    stack.pop().unwrap_or_default()
}

// Extract `(define-fun name () Sort value)` bindings.
fn parse_model(text: &str) -> BTreeMap<String, ModelValue> {
    let mut out = BTreeMap::new();
    let sexps = parse_sexps(&tokenize(text));
    let mut walk = |items: &[SExp]| {
        for item in items {
            if let SExp::List(parts) = item {
                if parts.len() >= 5 {
                    if let (SExp::Atom(kw), SExp::Atom(name)) = (&parts[0], &parts[1]) {
                        if kw == "define-fun" {
                            out.insert(name.clone(), decode_value(&parts[parts.len() - 1]));
                        }
                    }
                }
            }
        }
    };
    for sexp in &sexps {
        if let SExp::List(items) = sexp {
            match items.first() {
                Some(SExp::Atom(a)) if a == "model" => walk(&items[1..]),
                Some(SExp::Atom(a)) if a == "define-fun" => walk(std::slice::from_ref(sexp)),
                _ => walk(items),
            }
        }
    }
    out
}

fn decode_value(sexp: &SExp) -> ModelValue {
    match sexp {
        SExp::Atom(a) => {
            if a == "true" {
                ModelValue::Bool(true)
            } else if a == "false" {
                ModelValue::Bool(false)
            } else if let Ok(n) = a.parse::<i64>() {
                ModelValue::Int(n)
            } else {
                ModelValue::Opaque(a.clone())
            }
        }
        SExp::Str(s) => ModelValue::Str(s.clone()),
        SExp::List(items) => {
            // negative integers: (- 5)
            if items.len() == 2 {
                if let (SExp::Atom(minus), SExp::Atom(n)) = (&items[0], &items[1]) {
                    if minus == "-" {
                        if let Ok(n) = n.parse::<i64>() {
                            return ModelValue::Int(-n);
                        }
                    }
                }
            }
            ModelValue::Opaque(render_sexp(sexp))
        }
    }
}

fn render_sexp(sexp: &SExp) -> String {
    match sexp {
        SExp::Atom(a) => a.clone(),
        SExp::Str(s) => format!("{s:?}"),
        SExp::List(items) => {
            let parts: Vec<String> = items.iter().map(render_sexp).collect();
            format!("({})", parts.join(" "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_z3_style_models() {
        let text = r#"
(
  (define-fun c () Int (- 1))
  (define-fun b () Bool true)
  (define-fun s () String "ab")
)
"#;
        let model = parse_model(text);
        assert_eq!(model["c"], ModelValue::Int(-1));
        assert_eq!(model["b"], ModelValue::Bool(true));
        assert_eq!(model["s"], ModelValue::Str("ab".to_string()));
    }

    #[test]
    fn parses_cvc5_style_models() {
        let text = r#"
(
(define-fun x () Int 2)
(define-fun tbl_has_0 () Bool false)
)
"#;
        let model = parse_model(text);
        assert_eq!(model["x"], ModelValue::Int(2));
        assert_eq!(model["tbl_has_0"], ModelValue::Bool(false));
    }
}
