//! Chains of adjacent refinements of one domain, for checking that nesting
//! and unnesting preserve the outcome of a change.

use proptest::prelude::*;

use crate::calculus::{nest, unnest};
use crate::model::{apply_change, ChangeExpr, Domain, Environment};

#[derive(Debug, Clone)]
pub struct Step {
    pub retained: String,
    pub added: String,
    pub retained_extra: bool,
    pub added_extra: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub steps: Vec<Step>,
    pub prefix: bool,
    pub suffix: bool,
}

pub fn step() -> impl Strategy<Value = Step> {
    (0..4usize, 0..4usize, any::<bool>(), prop::sample::subsequence(vec!["t1", "x0"], 0..=2)).prop_map(
        |(r, a, retained_extra, added_extra)| Step {
            retained: format!("R{r}"),
            added: format!("A{a}"),
            retained_extra,
            added_extra,
        },
    )
}

pub fn chain() -> impl Strategy<Value = Chain> {
    (prop::collection::vec(step(), 2..5), any::<bool>(), any::<bool>()).prop_map(|(steps, prefix, suffix)| Chain {
        steps,
        prefix,
        suffix,
    })
}

/// Optional `+Y`, one refinement of `T` per step, optional `!X0`, joined
/// right-associatively with `;`.
pub fn expr(c: &Chain) -> ChangeExpr {
    let mut parts = Vec::new();
    if c.prefix {
        parts.push(ChangeExpr::Add(Domain::new("Y").controlling(["y"])));
    }
    for s in &c.steps {
        let mut retained = Domain::new(&s.retained).controlling(["t0"]);
        if s.retained_extra {
            retained = retained.controlling(["t1"]);
        }
        let added = Domain::new(&s.added).controlling(s.added_extra.clone());
        parts.push(ChangeExpr::refine("T", vec![retained], vec![added]));
    }
    if c.suffix {
        parts.push(ChangeExpr::cancel("X0"));
    }
    let mut it = parts.into_iter().rev();
    let last = it.next().expect("at least two steps");
    it.fold(last, |acc, p| ChangeExpr::seq(p, acc))
}

pub fn base() -> Environment {
    Environment::labelled(
        "Org",
        vec![
            Domain::new("T").controlling(["t0"]),
            Domain::new("X0").controlling(["x0"]),
            Domain::new("X1").observing(["y"]),
        ],
    )
}

fn same_outcome(env: &Environment, a: &ChangeExpr, b: &ChangeExpr) -> Result<(), TestCaseError> {
    let (ra, rb) = (apply_change(env, a), apply_change(env, b));
    prop_assert_eq!(ra.is_ok(), rb.is_ok(), "{} vs {}: {:?} / {:?}", a, b, ra, rb);
    prop_assert_eq!(ra.ok(), rb.ok());
    Ok(())
}

/// One nesting step, full nesting, and unnesting all apply identically to
/// the flat chain; `unnest` inverts `nest`.
pub fn rewrites_preserve_apply(c: &Chain) -> Result<(), TestCaseError> {
    let env = base();
    let flat = expr(c);
    let nested = nest(&flat).ok_or_else(|| TestCaseError::fail("no adjacent refinements to nest"))?;
    same_outcome(&env, &flat, &nested)?;
    prop_assert_eq!(unnest(&nested), Some(flat.clone()));
    let mut full = nested;
    while let Some(n) = nest(&full) {
        full = n;
    }
    same_outcome(&env, &flat, &full)?;
    let unnested = unnest(&full).ok_or_else(|| TestCaseError::fail("no nested refinement"))?;
    same_outcome(&env, &full, &unnested)
}
