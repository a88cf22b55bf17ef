//! Parallel semantics over nested configurations: forking on commute(true),
//! left/right projection, blocking join, lock steps, and labeled-execution
//! recording with a pluggable scheduler.

use crate::ast::Stmt;
use crate::state::{Frame, Globals, ScopedState};
use crate::stepper::{
    apply_redex, decompose, plug, CommuteRule, Decomposition, Effect, Redex, Reduced,
    RuleName, RuntimeError, StepConfig, StepResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use thiserror::Error;

/// The runtime tree of active fragments.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigTree {
    Leaf {
        stmt: Stmt,
        frames: Vec<Frame>,
        /// Commute blocks already completed at this sequential level; the
        /// next fork at this level gets this as its label subscript.
        done: u32,
    },
    Node {
        left: Box<ConfigTree>,
        right: Box<ConfigTree>,
        cont: Stmt,
        frames: Vec<Frame>,
        /// Label subscript assigned at fork time.
        index: u32,
    },
}

impl ConfigTree {
    pub fn frames(&self) -> &Vec<Frame> {
        match self {
            ConfigTree::Leaf { frames, .. } | ConfigTree::Node { frames, .. } => frames,
        }
    }

    pub fn is_skip_leaf(&self) -> bool {
        matches!(self, ConfigTree::Leaf { stmt, .. } if stmt.is_skip())
    }

    // structural formatting: the pretty-printer is not injective
    fn render(&self, out: &mut String) {
        match self {
            ConfigTree::Leaf { stmt, frames, done } => {
                out.push_str(&format!("leaf[{done}]<{stmt:?}>"));
                for f in frames {
                    out.push_str(&format!("{:?}", f.0));
                }
            }
            ConfigTree::Node {
                left,
                right,
                cont,
                frames,
                index,
            } => {
                out.push_str(&format!("node[{index}]("));
                left.render(out);
                out.push(',');
                right.render(out);
                out.push_str(&format!(")<{cont:?}>"));
                for f in frames {
                    out.push_str(&format!("{:?}", f.0));
                }
            }
        }
    }
}

/// A full machine state: the fragment tree plus the shared heap and locks.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub tree: ConfigTree,
    pub globals: Globals,
}

impl Configuration {
    /// Initial configuration for a program from a starting state.
    pub fn initial(program: &Stmt, state: ScopedState) -> Self {
        Configuration {
            tree: ConfigTree::Leaf {
                stmt: program.clone(),
                frames: state.frames,
                done: 0,
            },
            globals: state.globals,
        }
    }

    /// The outermost state component (`.st` of the configuration).
    pub fn outer_state(&self) -> ScopedState {
        ScopedState {
            frames: self.tree.frames().clone(),
            globals: self.globals.clone(),
        }
    }

    pub fn is_final(&self) -> bool {
        self.tree.is_skip_leaf()
    }

    /// Final state, when the configuration is `⟨skip, σ⟩`.
    pub fn final_state(&self) -> Option<ScopedState> {
        if self.is_final() {
            Some(self.outer_state())
        } else {
            None
        }
    }

    /// Exploration dedup key. Not canonical across allocation orders (raw
    /// heap ids appear), which only costs dedup hits, never correctness.
    pub fn dedup_key(&self) -> String {
        let mut out = String::new();
        self.tree.render(&mut out);
        out.push('|');
        for (loc, obj) in &self.globals.heap.objects {
            out.push_str(&format!("{loc}={};", obj.render()));
        }
        out.push('|');
        for n in self.globals.held_locks() {
            out.push_str(&format!("{n};"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

/// One token of a fragment label: which side of which commute block
/// (by sequential position) a step descended into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelToken {
    pub side: Side,
    pub index: u32,
}

impl fmt::Display for LabelToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.side {
            Side::Left => "L",
            Side::Right => "R",
        };
        write!(f, "{s}{}", self.index)
    }
}

/// Path of L/R tokens identifying the fragment that performed a step;
/// empty for top-level steps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FragmentLabel(pub Vec<LabelToken>);

impl FragmentLabel {
    pub fn is_top(&self) -> bool {
        self.0.is_empty()
    }

    pub fn render(&self) -> String {
        if self.0.is_empty() {
            "-".to_string()
        } else {
            self.0.iter().map(|t| t.to_string()).collect()
        }
    }

    pub fn parse(text: &str) -> Option<FragmentLabel> {
        if text == "-" {
            return Some(FragmentLabel::default());
        }
        let mut tokens = Vec::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            let side = match c {
                'L' => Side::Left,
                'R' => Side::Right,
                _ => return None,
            };
            let mut digits = String::new();
            while let Some(d) = chars.peek() {
                if d.is_ascii_digit() {
                    digits.push(*d);
                    chars.next();
                } else {
                    break;
                }
            }
            let index: u32 = digits.parse().ok()?;
            tokens.push(LabelToken { side, index });
        }
        if tokens.is_empty() {
            None
        } else {
            Some(FragmentLabel(tokens))
        }
    }

    pub fn has_prefix(&self, prefix: &[LabelToken]) -> bool {
        self.0.len() >= prefix.len() && &self.0[..prefix.len()] == prefix
    }
}

impl fmt::Display for FragmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

/// Transition label: fragment path plus the (at most one) state effect.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLabel {
    pub fr: FragmentLabel,
    pub eff: Effect,
}

/// One enabled parallel step.
#[derive(Debug, Clone)]
pub struct ParStep {
    pub label: TransitionLabel,
    pub rule: RuleName,
    pub next: Configuration,
}

/// All successors of a configuration under the parallel semantics, in a
/// deterministic order: join first, then left-derived, then right-derived
/// steps. An empty result means the configuration is terminal or blocked.
pub fn enabled_steps(
    config: &Configuration,
    cfg: &StepConfig,
) -> Result<Vec<ParStep>, RuntimeError> {
    let raw = tree_steps(&config.tree, &[], &config.globals, cfg)?;
    Ok(raw
        .into_iter()
        .map(|(tokens, eff, rule, tree, _outer, globals)| ParStep {
            label: TransitionLabel {
                fr: FragmentLabel(tokens),
                eff,
            },
            rule,
            next: Configuration { tree, globals },
        })
        .collect())
}

type RawStep = (
    Vec<LabelToken>,
    Effect,
    RuleName,
    ConfigTree,
    Vec<Frame>,
    Globals,
);

fn tree_steps(
    tree: &ConfigTree,
    outer: &[Frame],
    globals: &Globals,
    cfg: &StepConfig,
) -> Result<Vec<RawStep>, RuntimeError> {
    match tree {
        ConfigTree::Leaf { stmt, frames, done } => {
            if stmt.is_skip() {
                return Ok(vec![]);
            }
            let (ctx, redex) = match decompose(stmt) {
                Decomposition::AlreadyValue => return Ok(vec![]),
                Decomposition::Stuck(msg) => return Err(RuntimeError::Stuck(msg)),
                Decomposition::Redex(ctx, r) => (ctx, r),
            };
            if let Redex::CommuteTrue { left, right, .. } = &redex {
                // Fork-Step: the redex becomes a nested configuration with
                // fresh empty scopes; the continuation is H[skip].
                let node = ConfigTree::Node {
                    left: Box::new(ConfigTree::Leaf {
                        stmt: left.clone(),
                        frames: vec![Frame::new()],
                        done: 0,
                    }),
                    right: Box::new(ConfigTree::Leaf {
                        stmt: right.clone(),
                        frames: vec![Frame::new()],
                        done: 0,
                    }),
                    cont: plug(&ctx, Reduced::S(Stmt::Skip)),
                    frames: frames.clone(),
                    index: *done,
                };
                return Ok(vec![(
                    Vec::new(),
                    Effect::None,
                    RuleName::ForkStep,
                    node,
                    outer.to_vec(),
                    globals.clone(),
                )]);
            }
            // ordinary leaf step on the appended state
            let mut full = ScopedState {
                frames: frames.clone(),
                globals: globals.clone(),
            };
            full.append_frames(outer);
            let own = frames.len();
            match apply_redex(&ctx, &redex, &full, cfg, CommuteRule::SeqOnly)? {
                StepResult::Done => Ok(vec![]),
                StepResult::Blocked(_) => Ok(vec![]),
                StepResult::Next(outs) => Ok(outs
                    .into_iter()
                    .map(|o| {
                        let (own_frames, outer_frames, globals) = o.state.split_frames(own);
                        (
                            Vec::new(),
                            o.effect,
                            o.rule,
                            ConfigTree::Leaf {
                                stmt: o.stmt,
                                frames: own_frames,
                                done: *done,
                            },
                            outer_frames,
                            globals,
                        )
                    })
                    .collect()),
            }
        }
        ConfigTree::Node {
            left,
            right,
            cont,
            frames,
            index,
        } => {
            let mut steps = Vec::new();
            // Join blocks until both fragments reach skip; fragment frames
            // are discarded, the outer state survives.
            if left.is_skip_leaf() && right.is_skip_leaf() {
                steps.push((
                    Vec::new(),
                    Effect::None,
                    RuleName::Join,
                    ConfigTree::Leaf {
                        stmt: cont.clone(),
                        frames: frames.clone(),
                        done: index + 1,
                    },
                    outer.to_vec(),
                    globals.clone(),
                ));
            }
            let mut inner_outer: Vec<Frame> = frames.clone();
            inner_outer.extend(outer.iter().cloned());
            for (side, child, other) in [
                (Side::Left, left, right),
                (Side::Right, right, left),
            ] {
                for (mut tokens, eff, rule, child_tree, combined, new_globals) in
                    tree_steps(child, &inner_outer, globals, cfg)?
                {
                    let mut node_frames = combined;
                    let outer_frames = node_frames.split_off(frames.len());
                    tokens.insert(
                        0,
                        LabelToken {
                            side,
                            index: *index,
                        },
                    );
                    let (new_left, new_right) = match side {
                        Side::Left => (child_tree, (**other).clone()),
                        Side::Right => ((**other).clone(), child_tree),
                    };
                    steps.push((
                        tokens,
                        eff,
                        rule,
                        ConfigTree::Node {
                            left: Box::new(new_left),
                            right: Box::new(new_right),
                            cont: cont.clone(),
                            frames: node_frames,
                            index: *index,
                        },
                        outer_frames,
                        new_globals,
                    ));
                }
            }
            Ok(steps)
        }
    }
}

// ---- recorded executions ----

/// A labeled execution: the initial configuration and every transition.
#[derive(Debug, Clone)]
pub struct Execution {
    pub initial: Configuration,
    pub steps: Vec<(TransitionLabel, RuleName, Configuration)>,
}

impl Execution {
    pub fn final_config(&self) -> &Configuration {
        self.steps
            .last()
            .map(|(_, _, c)| c)
            .unwrap_or(&self.initial)
    }

    pub fn labels(&self) -> Vec<&TransitionLabel> {
        self.steps.iter().map(|(l, _, _)| l).collect()
    }
}

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("deadlock: no enabled steps; held locks: {held:?}")]
    Deadlock { held: Vec<u64> },
    #[error("step budget ({0}) exhausted")]
    BudgetExhausted(usize),
}

/// Step-choice policies for recorded runs. All are deterministic given
/// their inputs.
#[derive(Debug, Clone)]
pub enum Scheduler {
    /// Always the first enabled step (join, then leftmost).
    Leftmost,
    /// Rotates through enabled steps by step counter.
    RoundRobin,
    /// Seeded uniform choice.
    Seeded(u64),
    /// Fixed list of indices into the enabled list; falls back to leftmost
    /// when exhausted.
    Choices(Vec<usize>),
}

struct SchedulerState {
    policy: Scheduler,
    rng: Option<ChaCha8Rng>,
    cursor: usize,
}

impl SchedulerState {
    fn new(policy: Scheduler) -> Self {
        let rng = match &policy {
            Scheduler::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        SchedulerState {
            policy,
            rng,
            cursor: 0,
        }
    }

    fn pick(&mut self, enabled: usize, step_idx: usize) -> usize {
        let choice = match &self.policy {
            Scheduler::Leftmost => 0,
            Scheduler::RoundRobin => step_idx % enabled,
            Scheduler::Seeded(_) => self.rng.as_mut().unwrap().gen_range(0..enabled),
            Scheduler::Choices(list) => {
                let c = list.get(self.cursor).copied().unwrap_or(0);
                self.cursor += 1;
                c.min(enabled - 1)
            }
        };
        choice
    }
}

/// Drive a program under the parallel semantics with the given scheduler,
/// recording every transition.
pub fn run_recorded(
    program: &Stmt,
    initial: ScopedState,
    scheduler: Scheduler,
    cfg: &StepConfig,
    max_steps: usize,
) -> Result<Execution, RunError> {
    let mut sched = SchedulerState::new(scheduler);
    let start = Configuration::initial(program, initial);
    let mut current = start.clone();
    let mut steps = Vec::new();
    for step_idx in 0..max_steps {
        if current.is_final() {
            return Ok(Execution {
                initial: start,
                steps,
            });
        }
        let enabled = enabled_steps(&current, cfg)?;
        if enabled.is_empty() {
            return Err(RunError::Deadlock {
                held: current.globals.held_locks(),
            });
        }
        let idx = sched.pick(enabled.len(), step_idx);
        let chosen = enabled.into_iter().nth(idx).unwrap();
        steps.push((chosen.label, chosen.rule, chosen.next.clone()));
        current = chosen.next;
    }
    if current.is_final() {
        Ok(Execution {
            initial: start,
            steps,
        })
    } else {
        Err(RunError::BudgetExhausted(max_steps))
    }
}

// ---- trace dump format ----

/// Render an execution in the line-oriented trace format:
/// `step <i> | fr=<path or ->, eff=<name>=<value> | <rule-name>`,
/// optionally followed by `# state:` snapshot lines. All non-step lines
/// start with `#`.
pub fn render_trace(execution: &Execution, snapshots: bool) -> String {
    let mut out = String::from("# trace v1\n");
    let init = execution.initial.outer_state();
    out.push_str(&format!("# init: {}\n", init.render_lines().join(" ")));
    for (i, (label, rule, config)) in execution.steps.iter().enumerate() {
        out.push_str(&format!(
            "step {} | fr={}, eff={} | {}\n",
            i + 1,
            label.fr.render(),
            label.eff.render(),
            rule
        ));
        if snapshots {
            out.push_str(&format!(
                "# state: {}\n",
                config.outer_state().render_lines().join(" ")
            ));
        }
    }
    match execution.final_config().final_state() {
        Some(st) => out.push_str(&format!("# final: {}\n", st.render_lines().join(" "))),
        None => out.push_str("# final: <incomplete>\n"),
    }
    out
}

/// A parsed trace line, enough for the serializability analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub fr: FragmentLabel,
    pub eff: String,
    pub rule: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TraceParseError {
    #[error("line {0}: malformed trace line")]
    Malformed(usize),
    #[error("line {0}: malformed fragment label")]
    BadLabel(usize),
}

/// Parse the trace dump format back into label records. Lines starting with
/// `#` are comments/snapshots and are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '|');
        let head = parts.next().unwrap_or("").trim();
        let mid = parts.next().ok_or(TraceParseError::Malformed(lineno + 1))?;
        let rule = parts
            .next()
            .ok_or(TraceParseError::Malformed(lineno + 1))?
            .trim()
            .to_string();
        if !head.starts_with("step ") {
            return Err(TraceParseError::Malformed(lineno + 1));
        }
        let mid = mid.trim();
        let (fr_part, eff_part) = mid
            .split_once(", eff=")
            .ok_or(TraceParseError::Malformed(lineno + 1))?;
        let fr_text = fr_part
            .strip_prefix("fr=")
            .ok_or(TraceParseError::Malformed(lineno + 1))?;
        let fr =
            FragmentLabel::parse(fr_text).ok_or(TraceParseError::BadLabel(lineno + 1))?;
        out.push(TraceRecord {
            fr,
            eff: eff_part.to_string(),
            rule,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::value::Value;

    fn state_of(pairs: &[(&str, i64)]) -> ScopedState {
        ScopedState::from_frame(Frame(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), Value::Int(*v)))
                .collect(),
        ))
    }

    fn program(src: &str) -> Stmt {
        parse_program(src).expect("parse").body
    }

    #[test]
    fn fork_creates_empty_scopes_and_skip_continuation() {
        let p = program("commute(true) { { x = x + 1; } { y = y + 1; } } x = x + y;");
        let init = state_of(&[("x", 1), ("y", 0)]);
        let config = Configuration::initial(&p, init);
        let steps = enabled_steps(&config, &StepConfig::default()).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].rule, RuleName::ForkStep);
        match &steps[0].next.tree {
            ConfigTree::Node {
                left,
                right,
                cont,
                index,
                ..
            } => {
                assert_eq!(*index, 0);
                assert!(matches!(&**left, ConfigTree::Leaf { frames, .. } if frames.len() == 1 && frames[0].0.is_empty()));
                assert!(matches!(&**right, ConfigTree::Leaf { frames, .. } if frames.len() == 1 && frames[0].0.is_empty()));
                // continuation is skip; x = x + y
                assert!(matches!(cont.flatten()[..], [Stmt::Assign(..)]));
            }
            other => panic!("expected node, got {other:?}"),
        }
    }

    #[test]
    fn join_requires_both_sides_skip() {
        let p = program("commute(true) { { x = 1; } { y = 1; } }");
        let init = state_of(&[("x", 0), ("y", 0)]);
        let config = Configuration::initial(&p, init);
        let cfg = StepConfig::default();
        // fork
        let forked = enabled_steps(&config, &cfg).unwrap().remove(0).next;
        // run left to completion (children: read/compute/write per side is 1 step here)
        let steps = enabled_steps(&forked, &cfg).unwrap();
        // no join offered yet
        assert!(steps.iter().all(|s| s.rule != RuleName::Join));
        let left_done = steps
            .into_iter()
            .find(|s| s.label.fr.render().starts_with('L'))
            .unwrap()
            .next;
        let steps = enabled_steps(&left_done, &cfg).unwrap();
        assert!(steps.iter().all(|s| s.rule != RuleName::Join));
        let both_done = steps
            .into_iter()
            .find(|s| s.label.fr.render().starts_with('R'))
            .unwrap()
            .next;
        let steps = enabled_steps(&both_done, &cfg).unwrap();
        assert!(steps.iter().any(|s| s.rule == RuleName::Join));
    }

    #[test]
    fn labels_follow_the_tree_path() {
        let p = program(
            "commute(true) { { commute(true) { { x = 1; } { x = 2; } } } { y = 1; } }",
        );
        let init = state_of(&[("x", 0), ("y", 0)]);
        let cfg = StepConfig::default();
        let exec = run_recorded(&p, init, Scheduler::Leftmost, &cfg, 1000).unwrap();
        let rendered: Vec<String> = exec
            .steps
            .iter()
            .map(|(l, _, _)| l.fr.render())
            .collect();
        // outer fork at top level, inner fork labeled L0, inner-left step
        // labeled L0L0
        assert!(rendered.contains(&"L0".to_string()));
        assert!(rendered.contains(&"L0L0".to_string()));
    }

    #[test]
    fn trace_roundtrips_through_parser() {
        let p = program("commute(true) { { x = x + 1; } { y = y + 1; } } x = x + y;");
        let init = state_of(&[("x", 1), ("y", 0)]);
        let cfg = StepConfig::default();
        let exec = run_recorded(&p, init, Scheduler::Leftmost, &cfg, 1000).unwrap();
        let text = render_trace(&exec, false);
        let records = parse_trace(&text).unwrap();
        assert_eq!(records.len(), exec.steps.len());
        for (rec, (label, rule, _)) in records.iter().zip(&exec.steps) {
            assert_eq!(rec.fr, label.fr);
            assert_eq!(rec.rule, rule.to_string());
        }
    }

    #[test]
    fn lock_on_held_lock_blocks_single_thread() {
        let p = program("lock(0); lock(0);");
        let init = ScopedState::new();
        let cfg = StepConfig::default();
        let err = run_recorded(&p, init, Scheduler::Leftmost, &cfg, 100).unwrap_err();
        assert!(matches!(err, RunError::Deadlock { held } if held == vec![0]));
    }
}
