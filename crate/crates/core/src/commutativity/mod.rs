//! Sufficient-commutativity-condition checking: the brute-force oracle, the
//! logical embedding, solver-backed verification, and condition inference.

pub mod embed;
pub mod formula;
pub mod infer;
pub mod oracle;
pub mod solver;
pub mod summaries;
pub mod verify;

use crate::ast::{Expr, Stmt, Type};
use crate::typecheck::{typecheck_stmt, TypeError};

/// A commute block together with the typed environment visible at its
/// location. Sites are numbered in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct CommuteSite {
    pub id: usize,
    pub guard: Expr,
    pub left: Stmt,
    pub right: Stmt,
    /// Variables in scope at the site, sorted by name. Contains every free
    /// variable of the guard and both fragments (fragment locals excluded).
    pub env: Vec<(String, Type)>,
}

/// Collect every commute site of a program body, in source order, with its
/// visible environment.
pub fn extract_sites(
    body: &Stmt,
    inputs: &[(String, Type)],
) -> Result<Vec<CommuteSite>, TypeError> {
    let info = typecheck_stmt(body, inputs)?;
    let mut sites = Vec::new();
    collect(body, &mut sites);
    assert_eq!(
        sites.len(),
        info.site_envs.len(),
        "site walk order out of sync with the checker"
    );
    Ok(sites
        .into_iter()
        .zip(info.site_envs)
        .enumerate()
        .map(|(id, ((guard, left, right), env))| CommuteSite {
            id,
            guard,
            left,
            right,
            env,
        })
        .collect())
}

// Walk order must match the checker: statement order, commute before its
// fragments, left fragment before right.
fn collect(s: &Stmt, out: &mut Vec<(Expr, Stmt, Stmt)>) {
    match s {
        Stmt::Seq(a, b) => {
            collect(a, out);
            collect(b, out);
        }
        Stmt::If(_, t, e) => {
            collect(t, out);
            collect(e, out);
        }
        Stmt::While(_, b, _) => collect(b, out),
        Stmt::For(_, _, upd, b) => {
            collect(upd, out);
            collect(b, out);
        }
        Stmt::Commute {
            guard, left, right, ..
        } => {
            out.push(((*guard).clone(), (**left).clone(), (**right).clone()));
            collect(left, out);
            collect(right, out);
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn sites_numbered_in_source_order() {
        let p = parse_program(
            "int a = 0;\n\
             commute(true) { { commute(a == 0) { { a = 1; } { a = 2; } } } { a = 3; } }\n\
             commute(false) { { a = 4; } { a = 5; } }",
        )
        .unwrap();
        let sites = extract_sites(&p.body, &[]).unwrap();
        assert_eq!(sites.len(), 3);
        assert_eq!(sites[0].guard, Expr::bool(true));
        assert_eq!(sites[1].guard, Expr::binop(Expr::var("a"), crate::ast::BinOp::Eq, Expr::int(0)));
        assert_eq!(sites[2].guard, Expr::bool(false));
        for s in &sites {
            assert_eq!(s.env, vec![("a".to_string(), Type::Int)]);
        }
    }
}
