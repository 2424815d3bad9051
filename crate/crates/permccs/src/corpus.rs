//! Executable corpus: the running example, the satisfaction regressions,
//! the quicksort generator and specification macros, the two application
//! proofs with their mutants, and small derived-rule cases.

use thiserror::Error;

use crate::confined::{Perm, PermSet, System};
use crate::logic::{Formula, PermEnv, UnsatClass};
use crate::parser::{
    parse_defs, parse_env, parse_formula, parse_process, parse_proof_file, parse_sequent, parse_system, parse_system_file,
    resolve_system, ParseError,
};
use crate::process::{canon, CanonProcess};
use crate::proof::{Inst, ProofTree, Rule, Sequent};
use crate::syntax::{BoolExpr, DefTable, Expr, Name, Process};

pub const PRG_DEFS: &str = include_str!("../../../data/prg.defs");
pub const PRG_LE9_PROOF: &str = include_str!("../../../data/prg_le9.proof");
pub const PRG_GT9_PROOF: &str = include_str!("../../../data/prg_gt9.proof");

/// Permission environment shared by the satisfaction examples and proofs.
pub const PRG_ENV: &str = "c1 : {c1!}; c2 : {c2!}; c4 : {c4!, c1?}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("arrays to sort must be non-empty")]
    EmptyArray,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn with_prg(src: &str) -> String {
    format!("{PRG_DEFS}\n{src}")
}

/// Prg, Dbl and Fltr.
pub fn build_prg() -> DefTable {
    parse_defs(PRG_DEFS).expect("Prg definitions parse")
}

fn prg_process(src: &str) -> Process {
    build_prg().resolve(&parse_process(src).expect("corpus process parses")).expect("corpus process resolves")
}

fn prg_system(src: &str) -> System {
    parse_system_file(&with_prg(src)).expect("corpus system parses").1
}

/// `Prg | c1!v1 | c2!v2`.
pub fn prg_in_context(v1: i64, v2: i64) -> Process {
    prg_process(&format!("Prg() | c1!({v1}) | c2!({v2})"))
}

/// Expected unique evaluation of `Prg | c1!v1 | c2!v2`.
pub fn prg_expected(v1: i64) -> CanonProcess {
    let src = if v1 <= 9 {
        format!("c4!() | c1!({v1}, {})", 2 * v1)
    } else {
        format!("c4!({v1}) | new c3.c3?(x4).c1!(x4 + x4)")
    };
    canon(&parse_process(&src).expect("expected result parses"))
}

/// `Prg | c1!1 | c2!0 | c1!3`, racing on c1.
pub fn race_process() -> Process {
    prg_process("Prg() | c1!(1) | c2!(0) | c1!(3)")
}

/// Stable outcomes of the race that the evaluation must contain.
pub fn race_expected_leaves() -> Vec<CanonProcess> {
    ["c4!() | c1!(1, 2) | c1!(3)", "c4!() | c1!(3, 6) | c1!(1)", "c4!() | c1!(1, 3) | c1!(2)", "c4!() | c1!(3, 2) | c1!(6)"]
        .iter()
        .map(|s| canon(&parse_process(s).expect("race leaf parses")))
        .collect()
}

/// Reachable counterpart of the fourth displayed leak: after `Fltr` takes 3 and
/// `Dbl` answers 6, the reused `c1` input can only pick up the remaining 1.
pub fn race_corrected_leaf() -> CanonProcess {
    canon(&parse_process("c4!() | c1!(3, 1) | c1!(6)").expect("race leaf parses"))
}

/// First permission assignment of the running example.
pub fn prg_split_system() -> System {
    prg_system("<c1?, c2?, c4!>{Prg()} || <c1!>{c1!(2)} || <c2!>{c2!(5)}")
}

/// Second permission assignment of the running example.
pub fn prg_lent_system() -> System {
    prg_system("<c1?, c2?>{Prg()} || <c1!, c4!>{c1!(2)} || <c2!>{c2!(5)}")
}

/// Erased result both assignments must certify.
pub fn prg_certified_result() -> CanonProcess {
    canon(&parse_process("c1!(2, 4) | c4!()").expect("parses"))
}

/// Terminal permission sets of the displayed narrative: the output on c1
/// and the signal on c4 with their leaf permissions.
pub fn narrative_terminal_leaves() -> Vec<(PermSet, Process)> {
    let ps = |items: &[Perm]| items.iter().cloned().collect::<PermSet>();
    vec![
        (
            ps(&[Perm::output("c1"), Perm::input("c2"), Perm::output("c2")]),
            parse_process("c1!(2, 4)").expect("parses"),
        ),
        (ps(&[Perm::input("c1"), Perm::output("c4")]), parse_process("c4!()").expect("parses")),
    ]
}

pub fn prg_env() -> PermEnv {
    parse_env(PRG_ENV).expect("environment parses")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expected {
    Sat,
    Unsat(UnsatClass),
}

#[derive(Clone, Debug)]
pub struct SatCase {
    pub label: &'static str,
    pub env: PermEnv,
    pub system: System,
    pub formula: Formula,
    pub expected: Expected,
}

/// The satisfaction and non-satisfaction examples over Prg.
pub fn satisfaction_cases() -> Vec<SatCase> {
    let env = prg_env();
    let env3 = env.with(&Name::new("c3"), [Perm::output("c3")].into()).expect("extended environment");
    let f = |s: &str| parse_formula(s).expect("formula parses");
    let target = f("c1|->(2, 4) * c4|->()");
    let case = |label, env: &PermEnv, sys: &str, formula: &Formula, expected| SatCase {
        label,
        env: env.clone(),
        system: prg_system(sys),
        formula: formula.clone(),
        expected,
    };
    use Expected::*;
    vec![
        case("owned split", &env, "<c1?, c2?, c4!>{Prg()} || <c1!>{c1!(2)} || <c2!>{c2!(5)}", &target, Sat),
        case("single leaf", &env, "<c1?, c2?, c4!, c1!, c2!>{Prg() | c1!(2) | c2!(5)}", &target, Sat),
        case("partly evaluated", &env, "<c1!>{c1!(5 - 3, 3 + 1)} || <c4!, c1?>{c4!()}", &target, Sat),
        case(
            "sender lacks c1!",
            &env,
            "<c1?, c2?, c4!>{Prg()} || <>{c1!(2)} || <c2!>{c2!(5)}",
            &target,
            Unsat(UnsatClass::MissingPermission),
        ),
        case(
            "Prg lacks c1?",
            &env,
            "<c2?, c4!>{Prg()} || <c1!>{c1!(2)} || <c2!>{c2!(5)}",
            &target,
            Unsat(UnsatClass::MissingPermission),
        ),
        case("signal lacks c1?", &env, "<c1!>{c1!(5 - 3, 3 + 1)} || <c4!>{c4!()}", &target, Unsat(UnsatClass::EnvObligation)),
        case("wrong data", &env, "<c1!>{c1!(2, 3)} || <c4!, c1?>{c4!()}", &target, Unsat(UnsatClass::DataMismatch)),
        case(
            "blocked on c3",
            &env3,
            "<c1?, c2?, c4!, c3?>{Fltr() | Dbl()} || <c1!>{c1!(10)} || <c2!>{c2!(5)}",
            &f("c4|->10 * blk c3"),
            Sat,
        ),
        case("large input with any", &env, "<c1?, c2?, c4!>{Prg()} || <c1!>{c1!(10)} || <c2!>{c2!(5)}", &f("c4|->10 * any"), Sat),
        case("any", &env, "<c1?, c2?, c4!>{Prg()} || <c1!>{c1!(10)} || <c2!>{c2!(5)}", &f("any"), Sat),
        case("two blocked inputs", &env, "new c3.(<c1?>{c1?().c3!()} || <c2?>{c2?().c3?()})", &f("blk c1 * blk c2"), Sat),
    ]
}

/// Formulas no system satisfies.
pub fn unsatisfiable_formulas() -> Vec<Formula> {
    vec![parse_formula("c|->5 * c|->6").expect("parses"), parse_formula("c|->1 * blk c").expect("parses")]
}

// ---------------------------------------------------------------------------
// Quicksort

/// Name of the k-th array cell channel.
pub fn cell(k: usize) -> Name {
    Name::from(format!("a_{k}"))
}

fn qck(i: usize, j: usize) -> String {
    format!("Qck_{i}_{j}")
}

/// Quicksort specialised to arrays of length `n`.
///
/// Indexed channels become flat names `a_1..a_n` and index arithmetic is
/// resolved when the definitions are generated. The one index only known at
/// run time, the pivot position received from partitioning, is dispatched
/// with a conditional over its possible values. Ranges with `j <= i` signal
/// completion immediately.
pub fn build_quicksort(n: usize) -> DefTable {
    let mut src = String::new();
    for i in 1..=n + 1 {
        for j in i - 1..=n {
            src.push_str(&qck_def(i, j));
        }
    }
    for i in 1..=n {
        for j in i + 1..=n {
            src.push_str(&format!("def Prt_{i}_{j}() = {}?(x).Trv_{i}_{j}_{i}_{}(x)\n", cell(i), i + 1));
            for p in i..=j {
                for c in p + 1..=j + 1 {
                    src.push_str(&trv_def(i, j, p, c));
                }
            }
        }
    }
    parse_defs(&src).expect("generated quicksort parses")
}

fn qck_def(i: usize, j: usize) -> String {
    if j <= i {
        return format!("def {}() = r!()\n", qck(i, j));
    }
    let branch = |p: usize| format!("({}()[r1/r] | {}()[r2/r] | r1?().r2?().r!())", qck(i, p - 1), qck(p + 1, j));
    let mut dispatch = branch(j);
    for p in (i..j).rev() {
        dispatch = format!("if x = {p} then {} else {dispatch}", branch(p));
    }
    format!("def {}() = new r3.(Prt_{i}_{j}()[r3/r] | r3?(x).new r1, r2.{dispatch})\n", qck(i, j))
}

fn trv_def(l: usize, h: usize, p: usize, c: usize) -> String {
    let (al, ap) = (cell(l), cell(p));
    let head = format!("def Trv_{l}_{h}_{p}_{c}(x) = ");
    if c > h {
        let body = if l == p {
            format!("({al}!(x) | r!({p}))")
        } else {
            format!("{ap}?(y).({al}!(y) | {ap}!(x) | r!({p}))")
        };
        return format!("{head}{body}\n");
    }
    let ac = cell(c);
    let keep = format!("({ac}!(y) | Trv_{l}_{h}_{p}_{}(x))", c + 1);
    let swap = if c == p + 1 {
        format!("({ac}!(y) | Trv_{l}_{h}_{}_{}(x))", p + 1, c + 1)
    } else {
        let an = cell(p + 1);
        format!("{an}?(z).({ac}!(z) | {an}!(y) | Trv_{l}_{h}_{}_{}(x))", p + 1, c + 1)
    };
    format!("{head}{ac}?(y).if x <= y then {keep} else {swap}\n")
}

/// Array cells `⟨{a_k!}⟩a_k!(v_k)` next to `⟨{a_1?..a_n?, r!}⟩Qck(1, n)`.
pub fn encode_array(values: &[i64]) -> Result<System, CorpusError> {
    if values.is_empty() {
        return Err(CorpusError::EmptyArray);
    }
    let n = values.len();
    let ins: Vec<String> = (1..=n).map(|k| format!("{}?", cell(k))).collect();
    let mut parts = vec![format!("<{}, r!>{{{}()}}", ins.join(", "), qck(1, n))];
    for (k, v) in values.iter().enumerate() {
        parts.push(format!("<{a}!>{{{a}!({v})}}", a = cell(k + 1)));
    }
    Ok(parse_system(&parts.join(" || "))?)
}

/// Definitions and encoded system for sorting `values`.
pub fn quicksort_instance(values: &[i64]) -> Result<(DefTable, System), CorpusError> {
    let defs = build_quicksort(values.len());
    let sys = resolve_system(&defs, &encode_array(values)?)?;
    Ok((defs, sys))
}

/// Expected erased result: the cells carrying `sorted` plus the signal.
pub fn sorted_cells(sorted: &[i64]) -> CanonProcess {
    let mut parts: Vec<String> = sorted.iter().enumerate().map(|(k, v)| format!("{}!({v})", cell(k + 1))).collect();
    parts.push("r!()".into());
    canon(&parse_process(&parts.join(" | ")).expect("sorted cells parse"))
}

/// `arr`, `ord` and `veq` for the quicksort specification over cells
/// `a_i..a_j`, initial values `x_i..x_j` and results `y_i..y_j`.
pub fn gen_spec_formulas(i: usize, j: usize) -> (BoolExpr, Formula, Formula) {
    let xs: Vec<Expr> = (i..=j).map(|k| Expr::var(&format!("x{k}"))).collect();
    let ys: Vec<Expr> = (i..=j).map(|k| Expr::var(&format!("y{k}"))).collect();
    let cond = BoolExpr::and(ord(&ys), veq(&xs, &ys));
    let post = Formula::sep(arr(i, &ys), Formula::state("r", vec![]));
    (cond, arr(i, &xs), post)
}

/// `a_i↦v_0 ∗ a_{i+1}↦v_1 ∗ ...`, `emp` for no values.
pub fn arr(i: usize, vs: &[Expr]) -> Formula {
    match vs.split_first() {
        None => Formula::Emp,
        Some((v, rest)) if rest.is_empty() => Formula::State(cell(i), vec![v.clone()]),
        Some((v, rest)) => Formula::sep(Formula::State(cell(i), vec![v.clone()]), arr(i + 1, rest)),
    }
}

/// Adjacent values are ordered.
pub fn ord(vs: &[Expr]) -> BoolExpr {
    match vs {
        [a, b, rest @ ..] => {
            let head = BoolExpr::leq(a.clone(), b.clone());
            if rest.is_empty() {
                head
            } else {
                let mut tail = vec![b.clone()];
                tail.extend(rest.iter().cloned());
                BoolExpr::and(head, ord(&tail))
            }
        }
        _ => BoolExpr::tt(),
    }
}

/// `ys` is a permutation of `xs`: the head of `xs` sits at some position of
/// `ys` and the rest match up recursively. Singleton lists are `true`.
pub fn veq(xs: &[Expr], ys: &[Expr]) -> BoolExpr {
    if xs.len() <= 1 {
        return BoolExpr::tt();
    }
    let mut alts = Vec::new();
    for k in 0..ys.len() {
        let mut rest = ys.to_vec();
        let yk = rest.remove(k);
        alts.push(BoolExpr::and(BoolExpr::eq(yk, xs[0].clone()), veq(&xs[1..], &rest)));
    }
    BoolExpr::any(alts)
}

// ---------------------------------------------------------------------------
// Application proofs

/// The `x <= 9` derivation over Prg.
pub fn prg_le9_proof() -> (DefTable, ProofTree) {
    parse_proof_file(PRG_LE9_PROOF).expect("proof script parses")
}

/// The `x > 9` derivation over Prg.
pub fn prg_gt9_proof() -> (DefTable, ProofTree) {
    parse_proof_file(PRG_GT9_PROOF).expect("proof script parses")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    DropPermission,
    SwapPrePost,
    PerturbData,
    WeakenCondition,
}

#[derive(Clone, Debug)]
pub struct Mutant {
    pub path: Vec<usize>,
    pub kind: MutationKind,
    pub tree: ProofTree,
}

fn drop_permission(s: &Sequent) -> Option<Sequent> {
    fn go(sys: &System, done: &mut bool) -> System {
        match sys {
            System::Leaf(e, p) if !*done && !e.is_empty() => {
                *done = true;
                let mut e = e.clone();
                let first = e.iter().next().cloned().expect("non-empty");
                e.remove(&first);
                System::Leaf(e, p.clone())
            }
            System::Leaf(..) => sys.clone(),
            System::Par(a, b) => {
                let a2 = go(a, done);
                System::Par(a2.into(), go(b, done).into())
            }
            System::New(c, t) => System::New(c.clone(), go(t, done).into()),
        }
    }
    let mut done = false;
    let sys = go(&s.sys, &mut done);
    done.then(|| Sequent { sys, ..s.clone() })
}

fn perturb(f: &Formula) -> Option<Formula> {
    match f {
        Formula::State(c, es) if !es.is_empty() => {
            let mut es = es.clone();
            es[0] = Expr::add(es[0].clone(), Expr::lit(1));
            Some(Formula::State(c.clone(), es))
        }
        Formula::State(c, _) => Some(Formula::State(c.clone(), vec![Expr::lit(0)])),
        Formula::Sep(a, b) => perturb(a).map(|a| Formula::sep(a, (**b).clone())).or_else(|| perturb(b).map(|b| Formula::sep((**a).clone(), b))),
        _ => None,
    }
}

fn weaken(b: &BoolExpr) -> Option<BoolExpr> {
    match b {
        BoolExpr::And(l, _) => Some((**l).clone()),
        _ => None,
    }
}

fn mutate(s: &Sequent, kind: MutationKind) -> Option<Sequent> {
    let out = match kind {
        MutationKind::DropPermission => drop_permission(s)?,
        MutationKind::SwapPrePost => Sequent { pre: s.post.clone(), post: s.pre.clone(), ..s.clone() },
        MutationKind::PerturbData => match perturb(&s.post) {
            Some(post) => Sequent { post, ..s.clone() },
            None => Sequent { pre: perturb(&s.pre)?, ..s.clone() },
        },
        MutationKind::WeakenCondition => Sequent { cond: weaken(&s.cond)?, ..s.clone() },
    };
    (out != *s).then_some(out)
}

/// Single-node mutants in pre-order, cycling through the structural
/// mutation kinds; `lFls` leaves only depend on their condition and get the
/// condition weakened instead.
pub fn mutants(t: &ProofTree, count: usize) -> Vec<Mutant> {
    const CYCLE: [MutationKind; 3] = [MutationKind::DropPermission, MutationKind::SwapPrePost, MutationKind::PerturbData];
    let mut out = Vec::new();
    let mut k = 0;
    for path in t.paths() {
        if out.len() >= count {
            break;
        }
        let node = t.node(&path).expect("path from paths()");
        let kinds: Vec<MutationKind> = if node.rule == Rule::LFls {
            vec![MutationKind::WeakenCondition]
        } else {
            (0..3).map(|d| CYCLE[(k + d) % 3]).collect()
        };
        if let Some((kind, seq)) = kinds.iter().find_map(|&kd| mutate(&node.conclusion, kd).map(|s| (kd, s))) {
            let mut tree = t.clone();
            tree.node_mut(&path).expect("path from paths()").conclusion = seq;
            out.push(Mutant { path, kind, tree });
            if node.rule != Rule::LFls {
                k += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Derived-rule cases

fn sq(src: &str) -> Sequent {
    parse_sequent(src, &DefTable::empty()).unwrap_or_else(|e| panic!("corpus sequent `{src}`: {e}"))
}

fn node(rule: Rule, seq: &str, premises: Vec<ProofTree>) -> ProofTree {
    ProofTree::new(rule, sq(seq), premises)
}

/// Five small scripts exercising `rule`, which must be derived.
pub fn derived_cases(rule: Rule) -> Vec<ProofTree> {
    match rule {
        Rule::LCut => cut_cases(),
        Rule::LSep => sep_cases(),
        Rule::LSepSt => sep_st_cases(),
        Rule::LOutD => outd_cases(),
        Rule::LInD => ind_cases(),
        Rule::LFrm => frame_cases(Rule::LFrm),
        Rule::LFrmSt => frame_cases(Rule::LFrmSt),
        _ => vec![],
    }
}

fn cut_cases() -> Vec<ProofTree> {
    let mut out = Vec::new();
    for (k, vals) in ["1", "2, 3", "x", "x + 1, 7", ""].iter().enumerate() {
        let (c, d) = (format!("c{k}"), format!("d{k}"));
        let env = format!("env {c} : {{{c}!}}; {d} : {{{d}!}}; bool x <= 4");
        let binders: Vec<String> = (0..vals.split(',').filter(|s| !s.trim().is_empty()).count()).map(|i| format!("z{i}")).collect();
        let zs = binders.join(", ");
        let vals = if vals.is_empty() { String::new() } else { vals.to_string() };
        out.push(node(
            Rule::LCut,
            &format!("{env} |- {{emp}} <{c}!>{{{c}!({vals})}} || <{c}?, {d}!>{{{c}?({zs}).{d}!({zs})}} {{{d}|->({vals})}}"),
            vec![
                node(Rule::LOut, &format!("{env} |- {{emp}} <{c}!>{{{c}!({vals})}} {{{c}|->({vals})}}"), vec![]),
                node(
                    Rule::LIn,
                    &format!("{env} |- {{{c}|->({vals})}} <{c}?, {d}!>{{{c}?({zs}).{d}!({zs})}} {{{d}|->({vals})}}"),
                    vec![node(Rule::LOut, &format!("{env} |- {{emp}} <{c}?, {c}!, {d}!>{{{d}!({vals})}} {{{d}|->({vals})}}"), vec![])],
                ),
            ],
        ));
    }
    out
}

fn sep_cases() -> Vec<ProofTree> {
    let env = "env c : {c!}; d : {d!}; e : {e!}; bool true";
    let out_leaf = |ch: &str, v: &str| {
        (format!("<{ch}!>{{{ch}!({v})}}"), format!("{ch}|->({v})"), node(Rule::LOut, &format!("{env} |- {{emp}} <{ch}!>{{{ch}!({v})}} {{{ch}|->({v})}}"), vec![]))
    };
    let blk_leaf = |ch: &str| {
        (format!("<{ch}?>{{{ch}?(w).0}}"), format!("blk {ch}"), node(Rule::LBlk, &format!("{env} |- {{emp}} <{ch}?>{{{ch}?(w).0}} {{blk {ch}}}"), vec![]))
    };
    let pairs = vec![
        (out_leaf("c", "1"), blk_leaf("d")),
        (blk_leaf("c"), out_leaf("d", "2")),
        (out_leaf("c", "1"), out_leaf("d", "5")),
        (blk_leaf("c"), blk_leaf("e")),
        (out_leaf("e", "4, 4"), blk_leaf("c")),
    ];
    pairs
        .into_iter()
        .map(|((s1, f1, p1), (s2, f2, p2))| node(Rule::LSep, &format!("{env} |- {{emp}} {s1} || {s2} {{{f1} * {f2}}}"), vec![p1, p2]))
        .collect()
}

fn sep_st_cases() -> Vec<ProofTree> {
    let env = "env c : {c!}; d : {d!}; e : {e!}; bool true";
    let out = |ch: &str, v: &str| node(Rule::LOut, &format!("{env} |- {{emp}} <{ch}!>{{{ch}!({v})}} {{{ch}|->({v})}}"), vec![]);
    let mut cases = Vec::new();
    for (v1, v2) in [("1", "2"), ("0", "0"), ("3, 4", "5")] {
        cases.push(node(
            Rule::LSepSt,
            &format!("{env} |- {{emp}} <c!>{{c!({v1})}} || <d!>{{d!({v2})}} {{c|->({v1}) * d|->({v2})}}"),
            vec![out("c", v1), out("d", v2)],
        ));
    }
    // A consumed state precondition on the left.
    for v in ["1", "9"] {
        let left = node(
            Rule::LIn,
            &format!("{env} |- {{c|->({v})}} <c?, d!>{{c?(z).d!(z)}} {{d|->({v})}}"),
            vec![node(Rule::LOut, &format!("{env} |- {{emp}} <c?, c!, d!>{{d!({v})}} {{d|->({v})}}"), vec![])],
        );
        cases.push(node(
            Rule::LSepSt,
            &format!("{env} |- {{c|->({v}) * emp}} <c?, d!>{{c?(z).d!(z)}} || <e!>{{e!(5)}} {{d|->({v}) * e|->(5)}}"),
            vec![left, out("e", "5")],
        ));
    }
    cases
}

fn outd_cases() -> Vec<ProofTree> {
    [
        ("x = 3", "c!(x)", "c|->(3)"),
        ("x <= 5 && 5 <= x", "c!(x + x)", "c|->(10)"),
        ("x = 2 && y = 4", "c!(x, y + 1)", "c|->(2, 5)"),
        ("y + 1 = x", "c!(x - 1)", "c|->(y)"),
        ("true", "c!(1 + 1, 3 - 3)", "c|->(2, 0)"),
    ]
    .iter()
    .map(|(b, s, f)| node(Rule::LOutD, &format!("env c : {{c!}}; bool {b} |- {{emp}} <c!>{{{s}}} {{{f}}}"), vec![]))
    .collect()
}

fn ind_cases() -> Vec<ProofTree> {
    let env = "env c : {c!}; d : {d!}; bool true";
    [("1", "z", "1"), ("2, 3", "z, w", "2, 3"), ("7", "z", "7"), ("", "", ""), ("4, 5", "z, w", "5, 4")]
        .iter()
        .map(|(vals, xs, outs)| {
            let body_out: String = if xs.is_empty() {
                String::new()
            } else if *outs == "5, 4" {
                "w, z".into()
            } else {
                xs.to_string()
            };
            node(
                Rule::LInD,
                &format!("{env} |- {{c|->({vals})}} <c?, d!>{{c?({xs}).d!({body_out})}} {{d|->({outs})}}"),
                vec![node(Rule::LOut, &format!("{env} |- {{emp}} <c?, c!, d!>{{d!({outs})}} {{d|->({outs})}}"), vec![])],
            )
        })
        .collect()
}

fn frame_cases(rule: Rule) -> Vec<ProofTree> {
    let env = "env c : {c!}; d : {d!}; e : {e!}; bool true";
    let frames: [&str; 5] = if rule == Rule::LFrm {
        ["blk d", "d|->(2)", "blk e * d|->(1)", "blk d * blk e", "e|->(3, 3)"]
    } else {
        ["d|->(2)", "e|->(0)", "d|->(1) * e|->(1)", "emp", "d|->(7, 8)"]
    };
    frames
        .iter()
        .enumerate()
        .map(|(k, fr)| {
            let v = k + 1;
            let inner = node(Rule::LOut, &format!("{env} |- {{emp}} <c!>{{c!({v})}} {{c|->({v})}}"), vec![]);
            let t = node(rule, &format!("{env} |- {{{fr}}} <c!>{{c!({v})}} {{c|->({v}) * {fr}}}"), vec![inner]);
            // Every other case names its frame explicitly.
            if k % 2 == 0 {
                t.with_inst(Inst { frame: Some(parse_formula(fr).expect("frame parses")), ..Inst::default() })
            } else {
                t
            }
        })
        .collect()
}

/// The derived rules with corpus cases.
pub const DERIVED_RULES: [Rule; 7] = [Rule::LCut, Rule::LSep, Rule::LSepSt, Rule::LOutD, Rule::LInD, Rule::LFrm, Rule::LFrmSt];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prg_definitions_transcribed() {
        let defs = build_prg();
        let fltr = defs.get(&Name::new("Fltr")).unwrap();
        let Process::In(_, _, body) = &fltr.body else { panic!("Fltr starts with an input") };
        let Process::If(_, _, el) = &**body else { panic!("Fltr branches") };
        assert_eq!(**el, parse_process("c4!(x1)").unwrap());
        let dbl = &defs.get(&Name::new("Dbl")).unwrap().body;
        assert!(matches!(dbl, Process::In(c, _, k) if c.as_str() == "c2" && matches!(&**k, Process::In(d, _, _) if d.as_str() == "c3")));
        assert!(matches!(&defs.get(&Name::new("Prg")).unwrap().body, Process::New(c, _) if c.as_str() == "c3"));
    }

    #[test]
    fn spec_macros() {
        assert_eq!(arr(3, &[]), Formula::Emp);
        assert_eq!(ord(&[Expr::var("x1")]), BoolExpr::tt());
        assert_eq!(veq(&[Expr::var("x1")], &[Expr::var("y1")]), BoolExpr::tt());
        let (cond, pre, post) = gen_spec_formulas(1, 3);
        assert_eq!(pre.atoms().len(), 3);
        assert_eq!(post.atoms().len(), 4);
        let env = |xs: [i64; 3], ys: [i64; 3]| {
            let mut s = crate::syntax::Subst::new();
            for k in 0..3 {
                s.insert(Name::from(format!("x{}", k + 1)), Expr::lit(xs[k]));
                s.insert(Name::from(format!("y{}", k + 1)), Expr::lit(ys[k]));
            }
            s
        };
        assert!(cond.eval(&env([3, 1, 2], [1, 2, 3])).unwrap());
        assert!(!cond.eval(&env([3, 1, 2], [1, 2, 2])).unwrap());
        assert!(!cond.eval(&env([3, 1, 2], [3, 2, 1])).unwrap());
    }

    #[test]
    fn quicksort_generation() {
        assert!(matches!(encode_array(&[]), Err(CorpusError::EmptyArray)));
        let s = encode_array(&[3, 1, 2]).unwrap();
        assert_eq!(crate::confined::canon_system(&s).leaves.len(), 4);
        let defs = build_quicksort(1);
        assert_eq!(defs.get(&Name::new("Qck_1_1")).unwrap().body, parse_process("r!()").unwrap());
        assert!(build_quicksort(4).get(&Name::new("Trv_1_4_2_5")).is_some());
    }

    #[test]
    fn mutants_are_distinct_nodes() {
        let (_, t) = prg_le9_proof();
        let ms = mutants(&t, 10);
        assert_eq!(ms.len(), 10);
        for m in &ms {
            assert_ne!(m.tree.node(&m.path).unwrap().conclusion, t.node(&m.path).unwrap().conclusion);
        }
    }
}
