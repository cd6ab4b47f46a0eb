//! Random well-formed ASTs over a fixed catalogue model.

use proptest::prelude::*;

use crate::dsl::{parse_change, parse_environment, parse_model, parse_need, parse_problem, pretty, pretty_problem};
use crate::model::{ChangeExpr, Domain, Environment, Model, Need, Problem, RefineTarget, Refinement};

pub const MODEL: &str = r#"
model Org {
  phenomenon a.x : state
  phenomenon b.x : event
  phenomenon c.x : value
  phenomenon d.x : truth
  phenomenon p.x : state
  phenomenon q.x : entity
  domain A { controls a.x }
  domain B { observes a.x controls b.x causes a.x -> b.x }
  domain C { controls c.x description "third" }
  domain D { observes c.x controls d.x }
  proposed domain A' { controls a.x }
  proposed domain P { controls p.x }
  proposed domain Q { observes p.x controls q.x }
  proposed domain Part1 { }
  proposed domain Part2 { description "a \"quoted\" part" }
  stakeholder Owner : problem-owner { trusts Dev }
  stakeholder Dev : problem-solving-delegate
  need N1 "first"
  need N2
  need N3
  need N4
}
"#;

pub fn model() -> Model {
    parse_model(MODEL).expect("catalogue model parses")
}

const NAMES: [&str; 9] = ["A", "B", "C", "D", "A'", "P", "Q", "Part1", "Part2"];
const PARTS: [&str; 2] = ["Part1", "Part2"];

fn catalogue(name: &str) -> Domain {
    model().catalogue_domain(name).cloned().expect("catalogue domain")
}

fn plain() -> impl Strategy<Value = Domain> {
    prop::sample::select(NAMES.to_vec()).prop_map(catalogue)
}

fn parts() -> impl Strategy<Value = Vec<Domain>> {
    prop::collection::vec(prop::sample::select(PARTS.to_vec()).prop_map(catalogue), 0..3)
}

fn item() -> impl Strategy<Value = Domain> {
    prop_oneof![
        3 => plain(),
        1 => (plain(), parts(), parts()).prop_map(|(b, r, a)| Domain::composite(&b, r, a)),
    ]
}

fn refinement() -> impl Strategy<Value = Refinement> {
    let leaf = (prop::sample::select(NAMES.to_vec()), prop::collection::vec(plain(), 0..3), prop::collection::vec(plain(), 0..3))
        .prop_map(|(t, r, a)| Refinement::new(t, r, a));
    leaf.prop_recursive(2, 4, 1, |inner| {
        (inner, prop::collection::vec(plain(), 0..2), prop::collection::vec(plain(), 0..2)).prop_map(|(i, r, a)| Refinement {
            target: RefineTarget::Refined(Box::new(i)),
            retained: r,
            added: a,
        })
    })
}

pub fn change() -> impl Strategy<Value = ChangeExpr> {
    let leaf = prop_oneof![
        Just(ChangeExpr::Skip),
        prop::sample::select(vec!["F", "G", "F1"]).prop_map(ChangeExpr::unknown),
        item().prop_map(ChangeExpr::Add),
        prop::sample::select(NAMES.to_vec()).prop_map(|n| ChangeExpr::Cancel(n.to_string())),
        refinement().prop_map(ChangeExpr::Refine),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ChangeExpr::Seq(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| ChangeExpr::Par(Box::new(a), Box::new(b))),
        ]
    })
}

pub fn need() -> impl Strategy<Value = Need> {
    let atoms: Vec<Need> = model().needs.iter().map(|(n, d)| Need::atom(n.clone(), d.clone())).collect();
    prop::sample::select(atoms).prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Need::seq(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Need::par(a, b)),
        ]
    })
}

/// Environments over distinct base domains; some bases carry sub-domains.
pub fn environment() -> impl Strategy<Value = Environment> {
    let bases = prop::sample::subsequence(vec!["A", "B", "C", "D", "P", "Q"], 0..5);
    (bases, prop::collection::vec((parts(), parts(), any::<bool>()), 5), any::<bool>()).prop_map(|(names, shapes, labelled)| {
        let domains = names
            .iter()
            .zip(shapes)
            .map(|(n, (r, a, composite))| {
                let base = catalogue(n);
                if composite {
                    Domain::composite(&base, r, a)
                } else {
                    base
                }
            })
            .collect();
        if labelled {
            Environment::labelled("Org", domains)
        } else {
            Environment::new(domains)
        }
    })
}

pub fn problem() -> impl Strategy<Value = Problem> {
    (environment(), change(), prop::sample::select(vec!["Owner", "Dev"]), need()).prop_map(|(env, change, v, need)| Problem {
        env,
        change,
        validator: v.to_string(),
        need,
    })
}

fn parsed<T, E: std::fmt::Display>(printed: &str, r: Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(format!("{printed}: {e}")))
}

/// Print, reparse, compare. Needs compare in normal form.
pub fn problem_round_trips(m: &Model, p: &Problem) -> Result<(), TestCaseError> {
    prop_assume!(p.env.check_well_formed().is_ok());
    let printed = pretty(p);
    let back = parsed(&printed, parse_problem(&format!("problem p {{ {printed} }}"), m))?;
    let expected = Problem {
        need: p.need.normalized(),
        ..p.clone()
    };
    prop_assert_eq!(&back, &expected, "{}", printed);
    let block = pretty_problem("p", &back);
    prop_assert_eq!(parsed(&block, parse_problem(&block, m))?, back);
    Ok(())
}

pub fn change_round_trips(m: &Model, c: &ChangeExpr) -> Result<(), TestCaseError> {
    let printed = pretty(c);
    prop_assert_eq!(&parsed(&printed, parse_change(&printed, m))?, c, "{}", printed);
    Ok(())
}

pub fn need_round_trips(m: &Model, n: &Need) -> Result<(), TestCaseError> {
    let printed = pretty(n);
    let back = parsed(&printed, parse_need(&printed, m))?;
    prop_assert_eq!(&back, &n.normalized());
    prop_assert_eq!(pretty(&back), pretty(&n.normalized()));
    Ok(())
}

pub fn environment_round_trips(m: &Model, e: &Environment) -> Result<(), TestCaseError> {
    prop_assume!(e.check_well_formed().is_ok());
    let printed = pretty(e);
    prop_assert_eq!(&parsed(&printed, parse_environment(&printed, m))?, e);
    Ok(())
}
