//! Change propagation over phenomena: which domains a change touches
//! structurally, which it reaches through observation and causal links, and
//! where declared buffers stop it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::model::{phenomena_universe, ChangeExpr, Domain, Environment, RefineTarget};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImpactError {
    #[error("unknown domain '{0}'")]
    UnknownDomain(String),
    #[error("unknown phenomenon '{0}'")]
    UnknownPhenomenon(String),
    #[error("impact analysis takes a single add, cancel or refine, not {0}")]
    NotAnAtom(String),
}

/// What is being changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    Change(ChangeExpr),
    /// `domain` gains the causal link `cause -> effect`.
    NewLink {
        domain: String,
        cause: String,
        effect: String,
    },
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edit::Change(c) => write!(f, "{c}"),
            Edit::NewLink { domain, cause, effect } => write!(f, "link {domain} {cause} -> {effect}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ImpactReport {
    pub seed: String,
    pub edit: String,
    pub seed_phenomena: BTreeSet<String>,
    pub structural: BTreeSet<String>,
    /// Reached through observation; includes the buffers.
    pub behavioural: BTreeSet<String>,
    pub buffers: BTreeSet<String>,
    /// Domains the edit brings in (added or refined-in parts).
    pub introduced: BTreeSet<String>,
    /// Per impacted domain, a shortest chain `seed, phenomenon, domain, ...`.
    pub paths: BTreeMap<String, Vec<String>>,
    /// Impacted domains in discovery order, then by name.
    pub order: Vec<String>,
}

impl ImpactReport {
    pub fn impacted(&self) -> BTreeSet<String> {
        self.structural.union(&self.behavioural).cloned().collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("impact of {} on {}\n", self.edit, self.seed);
        let list = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "seeds: {}", list(&self.seed_phenomena));
        let _ = writeln!(out, "structural: {}", list(&self.structural));
        let _ = writeln!(out, "behavioural: {}", list(&self.behavioural));
        let _ = writeln!(out, "buffers: {}", list(&self.buffers));
        for d in &self.order {
            if let Some(p) = self.paths.get(d) {
                let _ = writeln!(out, "  {d}: {}", p.join(" -> "));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub domain: String,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundReport {
    pub pass: bool,
    pub permitted: BTreeSet<String>,
    pub violations: Vec<Violation>,
}

impl BoundReport {
    pub fn render_text(&self) -> String {
        if self.pass {
            return "bound: pass\n".into();
        }
        let mut out = String::from("bound: fail\n");
        for v in &self.violations {
            let _ = writeln!(out, "  {} not permitted: {}", v.domain, v.path.join(" -> "));
        }
        out
    }
}

fn seeds(env: &Environment, edit: &Edit) -> Result<(String, BTreeSet<String>, BTreeSet<String>), ImpactError> {
    let existing = |name: &str| env.domain(name).ok_or_else(|| ImpactError::UnknownDomain(name.to_string()));
    match edit {
        Edit::NewLink { domain, cause, effect } => {
            existing(domain)?;
            let universe = phenomena_universe(env);
            for p in [cause, effect] {
                if !universe.contains(p) {
                    return Err(ImpactError::UnknownPhenomenon(p.clone()));
                }
            }
            Ok((domain.clone(), [effect.clone()].into(), BTreeSet::new()))
        }
        Edit::Change(ChangeExpr::Cancel(name)) => Ok((name.clone(), existing(name)?.controlled_all(), BTreeSet::new())),
        Edit::Change(ChangeExpr::Add(d)) => Ok((
            d.name.clone(),
            d.controlled_all(),
            d.names().into_iter().collect(),
        )),
        Edit::Change(ChangeExpr::Refine(r)) => {
            let root = r.root().to_string();
            let mut phen = existing(&root)?.controlled_all();
            let mut introduced = BTreeSet::new();
            let mut cur = Some(r);
            while let Some(step) = cur {
                for part in step.parts() {
                    phen.extend(part.controlled_all());
                    introduced.extend(part.names());
                }
                cur = match &step.target {
                    RefineTarget::Refined(inner) => Some(inner),
                    RefineTarget::Domain(_) => None,
                };
            }
            Ok((root, phen, introduced))
        }
        Edit::Change(other) => Err(ImpactError::NotAnAtom(other.to_string())),
    }
}

/// Domains taking part in propagation: every domain with its own
/// phenomena (composites only group their parts).
fn participants(env: &Environment) -> Vec<&Domain> {
    env.all_domains().into_iter().filter(|d| !d.is_composite()).collect()
}

/// Propagates `edit` through `env`. Domains in `buffers` are marked when
/// reached but pass nothing on.
pub fn propagate(env: &Environment, edit: &Edit, buffers: &BTreeSet<String>) -> Result<ImpactReport, ImpactError> {
    for b in buffers {
        if env.domain(b).is_none() {
            return Err(ImpactError::UnknownDomain(b.clone()));
        }
    }
    let (seed, seed_phen, introduced) = seeds(env, edit)?;
    let domains = participants(env);
    let structural: BTreeSet<String> = [seed.clone()].into();

    // Level-synchronous BFS over the phenomenon/domain graph; among paths of
    // equal length the lexicographically least wins.
    let mut phen_path: BTreeMap<String, Vec<String>> = seed_phen
        .iter()
        .map(|p| (p.clone(), vec![seed.clone(), p.clone()]))
        .collect();
    let mut frontier: BTreeSet<String> = seed_phen.clone();
    let mut dom_path: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut order = Vec::new();
    while !frontier.is_empty() {
        let mut reached: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in &frontier {
            for d in domains.iter().filter(|d| d.observed.contains(p)) {
                if structural.contains(&d.name) || dom_path.contains_key(&d.name) {
                    continue;
                }
                let mut cand = phen_path[p].clone();
                cand.push(d.name.clone());
                match reached.get(&d.name) {
                    Some(best) if *best <= cand => {}
                    _ => {
                        reached.insert(d.name.clone(), cand);
                    }
                }
            }
        }
        let mut next: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (name, path) in &reached {
            order.push(name.clone());
            if buffers.contains(name) {
                continue;
            }
            let d = domains.iter().find(|d| &d.name == name).expect("participant");
            for l in &d.links {
                if phen_path.contains_key(&l.effect) {
                    continue;
                }
                let mut cand = path.clone();
                cand.push(l.effect.clone());
                match next.get(&l.effect) {
                    Some(best) if *best <= cand => {}
                    _ => {
                        next.insert(l.effect.clone(), cand);
                    }
                }
            }
        }
        dom_path.extend(reached);
        frontier = next.keys().cloned().collect();
        phen_path.extend(next);
    }

    let behavioural: BTreeSet<String> = dom_path.keys().cloned().collect();
    let mut paths = dom_path;
    paths.insert(seed.clone(), vec![seed.clone()]);
    let mut full_order = vec![seed.clone()];
    full_order.extend(order);
    Ok(ImpactReport {
        seed,
        edit: edit.to_string(),
        seed_phenomena: seed_phen,
        structural,
        buffers: behavioural.intersection(buffers).cloned().collect(),
        behavioural,
        introduced,
        paths,
        order: full_order,
    })
}

/// Checks an impact report against the domains allowed to change.
pub fn bound_report(report: &ImpactReport, permitted: &BTreeSet<String>) -> BoundReport {
    let violations: Vec<Violation> = report
        .order
        .iter()
        .filter(|d| !permitted.contains(*d))
        .map(|d| Violation {
            domain: d.clone(),
            path: report.paths[d].clone(),
        })
        .collect();
    BoundReport {
        pass: violations.is_empty(),
        permitted: permitted.clone(),
        violations,
    }
}

/// Passes iff everything `edit` impacts lies within `permitted`.
pub fn bound_check(env: &Environment, edit: &Edit, permitted: &BTreeSet<String>) -> Result<BoundReport, ImpactError> {
    Ok(bound_report(&propagate(env, edit, &BTreeSet::new())?, permitted))
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering: domains coloured by impact class, edges from a
/// phenomenon's source domain to its observers.
pub fn impact_dot(env: &Environment, report: &ImpactReport) -> String {
    graph(env, &format!("impact {}", report.edit), Some(report))
}

/// The phenomenon graph of an environment, without impact classes.
pub fn environment_dot(env: &Environment) -> String {
    graph(env, &env.label.clone().unwrap_or_else(|| "environment".into()), None)
}

fn graph(env: &Environment, title: &str, report: Option<&ImpactReport>) -> String {
    let mut out = format!("digraph {} {{\n  node [shape=box, style=filled];\n", quoted(title));
    let domains = participants(env);
    for d in &domains {
        let Some(report) = report else {
            let _ = writeln!(out, "  {} [fillcolor=white];", quoted(&d.name));
            continue;
        };
        let (class, colour) = if report.structural.contains(&d.name) {
            ("structural", "tomato")
        } else if report.buffers.contains(&d.name) {
            ("buffer", "lightblue")
        } else if report.behavioural.contains(&d.name) {
            ("behavioural", "orange")
        } else {
            ("unaffected", "white")
        };
        let _ = writeln!(out, "  {} [class={class}, fillcolor={colour}];", quoted(&d.name));
    }
    let mut edges = BTreeSet::new();
    for src in &domains {
        let produced: BTreeSet<&String> = src.controlled.iter().chain(src.links.iter().map(|l| &l.effect)).collect();
        for p in produced {
            for dst in domains.iter().filter(|d| d.observed.contains(p) && d.name != src.name) {
                edges.insert((src.name.clone(), dst.name.clone(), p.clone()));
            }
        }
    }
    for (a, b, p) in edges {
        let _ = writeln!(out, "  {} -> {} [label={}];", quoted(&a), quoted(&b), quoted(&p));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Environment {
        Environment::new(vec![
            Domain::new("C").observing(["y"]).controlling(["c"]),
            Domain::new("D").observing(["c"]).controlling(["d"]).with_link("c", "d"),
            Domain::new("E").observing(["d"]).controlling(["f"]).with_link("d", "f"),
            Domain::new("Y").controlling(["y"]),
        ])
    }

    fn link() -> Edit {
        Edit::NewLink {
            domain: "C".into(),
            cause: "y".into(),
            effect: "c".into(),
        }
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_reaches_d_and_e() {
        let r = propagate(&chain(), &link(), &BTreeSet::new()).unwrap();
        assert_eq!(r.structural, set(&["C"]));
        assert_eq!(r.behavioural, set(&["D", "E"]));
        assert_eq!(r.paths["E"], ["C", "c", "D", "d", "E"]);
        assert_eq!(r.order, ["C", "D", "E"]);
    }

    #[test]
    fn buffer_stops_propagation() {
        let r = propagate(&chain(), &link(), &set(&["D"])).unwrap();
        assert_eq!(r.behavioural, set(&["D"]));
        assert_eq!(r.buffers, set(&["D"]));
    }

    #[test]
    fn bound_lists_violations_with_paths() {
        let b = bound_check(&chain(), &link(), &set(&["C"])).unwrap();
        assert!(!b.pass);
        let doms: Vec<&str> = b.violations.iter().map(|v| v.domain.as_str()).collect();
        assert_eq!(doms, ["D", "E"]);
        assert!(bound_check(&chain(), &link(), &set(&["C", "D", "E", "Y"])).unwrap().pass);
    }

    #[test]
    fn isolated_edit_has_no_behavioural_impact() {
        let r = propagate(&chain(), &Edit::Change(ChangeExpr::cancel("Y")), &BTreeSet::new()).unwrap();
        assert_eq!(r.behavioural, set(&["C"]));
        let env = Environment::new(vec![Domain::new("Z").controlling(["z"])]);
        let r = propagate(&env, &Edit::Change(ChangeExpr::cancel("Z")), &BTreeSet::new()).unwrap();
        assert!(r.behavioural.is_empty());
    }

    #[test]
    fn cycles_terminate() {
        let env = Environment::new(vec![
            Domain::new("A").observing(["b"]).controlling(["a"]).with_link("b", "a"),
            Domain::new("B").observing(["a"]).controlling(["b"]).with_link("a", "b"),
        ]);
        let r = propagate(&env, &Edit::Change(ChangeExpr::cancel("A")), &BTreeSet::new()).unwrap();
        assert_eq!(r.behavioural, set(&["B"]));
    }

    #[test]
    fn unknown_names_are_errors() {
        let e = propagate(&chain(), &Edit::Change(ChangeExpr::cancel("Q")), &BTreeSet::new()).unwrap_err();
        assert_eq!(e, ImpactError::UnknownDomain("Q".into()));
        let bad = Edit::NewLink {
            domain: "C".into(),
            cause: "nope".into(),
            effect: "c".into(),
        };
        assert_eq!(propagate(&chain(), &bad, &BTreeSet::new()).unwrap_err(), ImpactError::UnknownPhenomenon("nope".into()));
    }

    #[test]
    fn dot_marks_classes() {
        let r = propagate(&chain(), &link(), &set(&["D"])).unwrap();
        let dot = impact_dot(&chain(), &r);
        assert!(dot.contains("\"C\" [class=structural"));
        assert!(dot.contains("\"D\" [class=buffer"));
        assert!(dot.contains("\"E\" [class=unaffected"));
        assert!(dot.contains("\"C\" -> \"D\" [label=\"c\"]"));
    }
}
