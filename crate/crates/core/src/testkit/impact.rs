//! Random environments with an edit, and a naive fixpoint oracle for
//! propagation.

use std::collections::BTreeSet;

use proptest::prelude::*;

use crate::impact::{propagate, Edit};
use crate::model::{ChangeExpr, Domain, Environment};

#[derive(Debug, Clone)]
pub struct World {
    pub env: Environment,
    pub buffers: BTreeSet<String>,
    pub edit: Edit,
}

fn phen(i: usize) -> String {
    format!("p{i}")
}

/// Up to ten domains `Di`, each controlling `pi`, with random observations,
/// causal links and buffers. The edit cancels a domain or adds a link.
pub fn world() -> impl Strategy<Value = World> {
    (1..=10usize)
        .prop_flat_map(|n| {
            let m = n + 4;
            (
                Just(n),
                prop::collection::vec(prop::collection::btree_set(0..m, 0..4), n),
                prop::collection::vec((0..n, 0..m, 0..m), 0..=30),
                prop::collection::btree_set(0..n, 0..3),
                (0..n, any::<bool>(), 0..m),
            )
        })
        .prop_map(|(n, observes, links, buffers, (target, cancel, effect))| {
            let mut domains: Vec<Domain> = (0..n)
                .map(|i| Domain::new(format!("D{i}")).controlling([phen(i)]).observing(observes[i].iter().map(|&j| phen(j))))
                .collect();
            for (d, cause, eff) in links {
                domains[d] = domains[d].clone().with_link(phen(cause), phen(eff));
            }
            let edit = if cancel {
                Edit::Change(ChangeExpr::cancel(format!("D{target}")))
            } else {
                Edit::NewLink {
                    domain: format!("D{target}"),
                    cause: phen(target),
                    effect: phen(effect.min(n - 1)),
                }
            };
            World {
                env: Environment::new(domains),
                buffers: buffers.into_iter().map(|i| format!("D{i}")).collect(),
                edit,
            }
        })
}

/// Fixpoint over "observes an affected phenomenon" and "causal link of an
/// impacted, non-buffer domain". Returns (impacted, impacted buffers).
pub fn oracle(w: &World) -> (BTreeSet<String>, BTreeSet<String>) {
    let (seed, mut affected): (String, BTreeSet<String>) = match &w.edit {
        Edit::NewLink { domain, effect, .. } => (domain.clone(), [effect.clone()].into()),
        Edit::Change(ChangeExpr::Cancel(d)) => {
            let dom = w.env.domains.iter().find(|x| &x.name == d).expect("cancelled domain exists");
            (d.clone(), dom.controlled.clone())
        }
        other => panic!("oracle does not model {other:?}"),
    };
    let mut impacted: BTreeSet<String> = BTreeSet::new();
    loop {
        let before = (affected.len(), impacted.len());
        for d in &w.env.domains {
            if d.name != seed && d.observed.iter().any(|p| affected.contains(p)) {
                impacted.insert(d.name.clone());
            }
        }
        for d in &w.env.domains {
            if impacted.contains(&d.name) && !w.buffers.contains(&d.name) {
                affected.extend(d.links.iter().map(|l| l.effect.clone()));
            }
        }
        if (affected.len(), impacted.len()) == before {
            break;
        }
    }
    let buffers = impacted.intersection(&w.buffers).cloned().collect();
    (impacted, buffers)
}

/// `propagate` agrees with the oracle and every reported path is a real
/// observation chain from the seed.
pub fn agrees_with_oracle(w: &World) -> Result<(), TestCaseError> {
    let r = propagate(&w.env, &w.edit, &w.buffers).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (behavioural, buffers) = oracle(w);
    prop_assert_eq!(&r.behavioural, &behavioural);
    prop_assert_eq!(&r.buffers, &buffers);
    prop_assert!(r.structural.is_disjoint(&r.behavioural));
    prop_assert!(r.structural.contains(&r.seed));
    for d in &r.behavioural {
        let path = &r.paths[d];
        prop_assert_eq!(path.first(), Some(&r.seed));
        prop_assert_eq!(path.last(), Some(d));
        for hop in path.windows(3).step_by(2) {
            let obs = w.env.domains.iter().find(|x| x.name == hop[2]).expect("path names a domain");
            prop_assert!(obs.observed.contains(&hop[1]));
        }
    }
    Ok(())
}

pub fn extra_buffer_shrinks(w: &World, extra: usize) -> Result<(), TestCaseError> {
    let base = propagate(&w.env, &w.edit, &w.buffers).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut more = w.buffers.clone();
    more.insert(format!("D{}", extra % w.env.domains.len()));
    let cut = propagate(&w.env, &w.edit, &more).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(cut.behavioural.is_subset(&base.behavioural));
    Ok(())
}
