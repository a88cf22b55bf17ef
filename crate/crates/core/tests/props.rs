//! Property tests: printer/parser round-trip over generated programs and
//! the decompose/plug identity along generated executions.

use commute_core::ast::*;
use commute_core::parser::parse_program;
use commute_core::printer::print_program;
use commute_core::state::ScopedState;
use commute_core::stepper::{
    decompose, plug, redex_to_term, step_nd, Decomposition, StepConfig, StepResult,
};
use commute_core::value::Value;
use proptest::prelude::*;

const VARS: [&str; 4] = ["a", "b", "c", "d"];
const BOOLS: [&str; 2] = ["p", "q"];

fn int_expr(depth: u32) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (-4i64..=4).prop_map(Expr::int),
        prop::sample::select(&VARS[..]).prop_map(Expr::var),
    ];
    leaf.prop_recursive(depth, 16, 3, |inner| {
        prop_oneof![
            (
                inner.clone(),
                prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul]),
                inner.clone()
            )
                .prop_map(|(a, op, b)| Expr::binop(a, op, b)),
            // the parser folds negated literals, so keep those out of
            // generated normal forms
            inner.clone().prop_map(|e| match e {
                Expr::Const(_) => e,
                other => Expr::Unop(UnOp::Neg, Box::new(other)),
            }),
            (bool_expr_shallow(), inner.clone(), inner)
                .prop_map(|(c, a, b)| Expr::Ternary(Box::new(c), Box::new(a), Box::new(b))),
        ]
    })
    .boxed()
}

fn bool_expr_shallow() -> BoxedStrategy<Expr> {
    prop_oneof![
        any::<bool>().prop_map(Expr::bool),
        prop::sample::select(&BOOLS[..]).prop_map(Expr::var),
        (
            prop::sample::select(&VARS[..]).prop_map(Expr::var),
            prop::sample::select(vec![
                BinOp::Lt,
                BinOp::Le,
                BinOp::Gt,
                BinOp::Ge,
                BinOp::Eq,
                BinOp::Ne
            ]),
            (-2i64..=2).prop_map(Expr::int)
        )
            .prop_map(|(a, op, b)| Expr::binop(a, op, b)),
    ]
    .boxed()
}

fn stmt(depth: u32) -> BoxedStrategy<Stmt> {
    let assign = (prop::sample::select(&VARS[..]), int_expr(2))
        .prop_map(|(v, e)| Stmt::Assign(LValue::Var(v.to_string()), e));
    let leaf = prop_oneof![
        assign,
        Just(Stmt::Skip),
        (prop::sample::select(&BOOLS[..]), bool_expr_shallow())
            .prop_map(|(v, e)| Stmt::Assign(LValue::Var(v.to_string()), e)),
    ];
    leaf.prop_recursive(depth, 24, 4, |inner| {
        let seq = prop::collection::vec(inner.clone(), 1..4).prop_map(Stmt::seq_all);
        prop_oneof![
            seq.clone(),
            (bool_expr_shallow(), inner.clone(), inner.clone()).prop_map(|(c, t, e)| Stmt::If(
                c,
                Box::new(t),
                Box::new(e)
            )),
            (bool_expr_shallow(), inner.clone(), inner.clone()).prop_map(|(g, l, r)| {
                Stmt::Commute {
                    keyword: CommuteKeyword::Plain,
                    guard: g,
                    left: Box::new(l),
                    right: Box::new(r),
                }
            }),
        ]
    })
    .boxed()
}

fn initial_state() -> ScopedState {
    let mut st = ScopedState::new();
    for v in VARS {
        st.declare(v, Value::Int(1));
    }
    for b in BOOLS {
        st.declare(b, Value::Bool(true));
    }
    st
}

// Generated statements may nest sequences arbitrarily; parsing normalizes,
// so compare through one parse.
fn normal_form(s: &Stmt) -> Stmt {
    commute_core::parser::normalize_seqs(s.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn print_parse_roundtrip(s in stmt(3)) {
        let program = Program { body: normal_form(&s), functions: vec![], domain: None };
        let printed = print_program(&program);
        let reparsed = parse_program(&printed)
            .unwrap_or_else(|e| panic!("reparse failed: {e:?}\n{printed}"));
        prop_assert_eq!(program, reparsed);
    }

    #[test]
    fn decompose_plug_identity_along_executions(s in stmt(3)) {
        let cfg = StepConfig::default();
        let mut stmt = normal_form(&s);
        let mut state = initial_state();
        for _ in 0..120 {
            match decompose(&stmt) {
                Decomposition::AlreadyValue => break,
                Decomposition::Stuck(_) => break,
                Decomposition::Redex(ctx, r) => {
                    prop_assert_eq!(&plug(&ctx, redex_to_term(&r)), &stmt);
                }
            }
            match step_nd(&stmt, &state, &cfg) {
                Ok(StepResult::Next(mut outs)) => {
                    let out = outs.remove(0);
                    stmt = out.stmt;
                    state = out.state;
                }
                _ => break,
            }
        }
    }

    #[test]
    fn nd_final_sets_contain_the_seq_final(s in stmt(2)) {
        use commute_core::explorer::{bigstep, Budget, Semantics};
        let cfg = StepConfig::default();
        let body = normal_form(&s);
        let init = initial_state();
        let budget = Budget { max_steps: 2_000, max_visited: 20_000 };
        let seq = bigstep(&body, &init, Semantics::Seq, budget, &cfg);
        let nd = bigstep(&body, &init, Semantics::Nd, budget, &cfg);
        if seq.complete && nd.complete && seq.errors.is_empty() {
            prop_assert!(seq.is_subset_of(&nd));
            prop_assert_eq!(seq.finals.len(), 1);
        }
    }
}
