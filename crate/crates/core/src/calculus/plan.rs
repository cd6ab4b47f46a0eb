use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use super::engine::{Derivation, NodeState};
use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("derivation is not solved ({0})")]
    UnsolvedTree(String),
    #[error("plan constraints form a cycle through {}", .0.join(", "))]
    CycleDetected(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlannedStep {
    pub id: String,
    pub action: String,
    pub installs: String,
    /// 1-based stage in which the step can run.
    pub stage: usize,
    pub after: Vec<String>,
    pub parallel_ok: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadline: Option<String>,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImplementationPlan {
    pub derivation: String,
    pub stages: Vec<Vec<String>>,
    pub steps: Vec<PlannedStep>,
    /// Declared and sequence-implied constraints, deduplicated.
    pub constraints: Vec<Constraint>,
}

impl ImplementationPlan {
    pub fn step(&self, id: &str) -> Option<&PlannedStep> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("plan {}\n", self.derivation);
        for (i, stage) in self.stages.iter().enumerate() {
            let _ = writeln!(out, "stage {}", i + 1);
            for id in stage {
                let s = self.step(id).expect("staged steps exist");
                let _ = write!(out, "  {} installs {}: {}", s.id, s.installs, s.action);
                if !s.after.is_empty() {
                    let _ = write!(out, " [after {}]", s.after.join(", "));
                }
                if !s.parallel_ok.is_empty() {
                    let _ = write!(out, " [parallel-ok {}]", s.parallel_ok.join(", "));
                }
                if let Some(d) = &s.deadline {
                    let _ = write!(out, " [deadline {d}]");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Some cycle in an `after` relation given as (step, predecessor) pairs.
pub fn find_cycle(edges: &[(String, String)]) -> Option<Vec<String>> {
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (step, before) in edges {
        succ.entry(before).or_default().insert(step);
        succ.entry(step).or_default();
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut colour: BTreeMap<&str, u8> = succ.keys().map(|k| (*k, 0)).collect();
    fn visit<'a>(
        n: &'a str,
        succ: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        colour: &mut BTreeMap<&'a str, u8>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        colour.insert(n, 1);
        stack.push(n);
        for &m in &succ[n] {
            match colour[m] {
                1 => {
                    let start = stack.iter().position(|s| *s == m).expect("on stack");
                    return Some(stack[start..].iter().map(|s| s.to_string()).collect());
                }
                0 => {
                    if let Some(c) = visit(m, succ, colour, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        colour.insert(n, 2);
        None
    }
    let keys: Vec<&str> = succ.keys().copied().collect();
    for k in keys {
        if colour[k] == 0 {
            if let Some(c) = visit(k, &succ, &mut colour, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Layers steps so each runs one stage after its latest predecessor.
/// Within a stage, ids are sorted.
pub fn schedule(ids: &[String], after: &[(String, String)]) -> Result<Vec<Vec<String>>, PlanError> {
    if let Some(c) = find_cycle(after) {
        return Err(PlanError::CycleDetected(c));
    }
    let mut preds: BTreeMap<&str, BTreeSet<&str>> = ids.iter().map(|i| (i.as_str(), BTreeSet::new())).collect();
    for (step, before) in after {
        if let Some(p) = preds.get_mut(step.as_str()) {
            p.insert(before);
        }
    }
    let mut stage: BTreeMap<&str, usize> = BTreeMap::new();
    while stage.len() < preds.len() {
        let ready: Vec<(&str, usize)> = preds
            .iter()
            .filter(|(id, _)| !stage.contains_key(*id))
            .filter_map(|(id, ps)| {
                let known: Option<Vec<usize>> = ps
                    .iter()
                    .filter(|p| preds.contains_key(*p))
                    .map(|p| stage.get(p).copied())
                    .collect();
                known.map(|k| (*id, k.into_iter().max().map_or(0, |m| m + 1)))
            })
            .collect();
        stage.extend(ready);
    }
    let depth = stage.values().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); depth];
    for (id, s) in stage {
        out[s].push(id.to_string());
    }
    Ok(out)
}

/// The implementation plan of a solved derivation: every step of the tree,
/// ordered by declared constraints plus the order sequences imply.
pub fn extract_plan(d: &Derivation) -> Result<ImplementationPlan, PlanError> {
    super::engine::solution_of(d)?;
    let mut steps: Vec<(&PlanStep, &NodePath)> = Vec::new();
    let mut constraints: BTreeSet<Constraint> = BTreeSet::new();
    for n in d.root.walk() {
        steps.extend(n.plan.steps.iter().map(|s| (s, &n.path)));
        constraints.extend(n.plan.all_constraints());
        if n.rule() == Some(RuleId::Sequence) && n.premises.len() == 2 {
            for late in n.premises[1].steps() {
                for early in n.premises[0].steps() {
                    constraints.insert(Constraint {
                        step: late.id.clone(),
                        kind: ConstraintKind::After,
                        other: early.id.clone(),
                    });
                }
            }
        }
        debug_assert!(n.state != NodeState::Open);
    }
    let ids: Vec<String> = steps.iter().map(|(s, _)| s.id.clone()).collect();
    let after: Vec<(String, String)> = constraints
        .iter()
        .filter(|c| c.kind == ConstraintKind::After)
        .map(|c| (c.step.clone(), c.other.clone()))
        .collect();
    let stages = schedule(&ids, &after)?;
    let stage_of: BTreeMap<&str, usize> = stages
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |id| (id.as_str(), i + 1)))
        .collect();
    let related = |id: &str, kind: ConstraintKind| -> Vec<String> {
        let set: BTreeSet<String> = constraints
            .iter()
            .filter(|c| c.kind == kind)
            .filter_map(|c| {
                if c.step == id {
                    Some(c.other.clone())
                } else if kind == ConstraintKind::ParallelOk && c.other == id {
                    Some(c.step.clone())
                } else {
                    None
                }
            })
            .collect();
        set.into_iter().collect()
    };
    let mut planned: Vec<PlannedStep> = steps
        .iter()
        .map(|(s, path)| PlannedStep {
            id: s.id.clone(),
            action: s.action.clone(),
            installs: s.installs.to_string(),
            stage: stage_of[s.id.as_str()],
            after: related(&s.id, ConstraintKind::After),
            parallel_ok: related(&s.id, ConstraintKind::ParallelOk),
            deadline: s.deadline.as_ref().map(|d| d.to_string()),
            node: path.to_string(),
        })
        .collect();
    planned.sort_by(|a, b| (a.stage, &a.id).cmp(&(b.stage, &b.id)));
    Ok(ImplementationPlan {
        derivation: d.name.clone(),
        stages,
        steps: planned,
        constraints: constraints.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn e(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn longest_path_layers() {
        let stages = schedule(&s(&["a", "b", "c", "d"]), &[e("b", "a"), e("c", "b"), e("d", "a")]).unwrap();
        assert_eq!(stages, vec![s(&["a"]), s(&["b", "d"]), s(&["c"])]);
    }

    #[test]
    fn cycle_is_reported() {
        let err = schedule(&s(&["a", "b"]), &[e("a", "b"), e("b", "a")]).unwrap_err();
        assert!(matches!(err, PlanError::CycleDetected(c) if c.len() == 2));
    }

    proptest! {
        #[test]
        fn schedule_respects_every_edge(n in 1usize..10, raw in proptest::collection::vec((0usize..10, 0usize..10), 0..20)) {
            // edges only from higher to lower index, so acyclic
            let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let edges: Vec<(String, String)> = raw
                .into_iter()
                .filter(|(a, b)| a < &n && b < a)
                .map(|(a, b)| (ids[a].clone(), ids[b].clone()))
                .collect();
            let stages = schedule(&ids, &edges).unwrap();
            let at: BTreeMap<&str, usize> = stages.iter().enumerate().flat_map(|(i, st)| st.iter().map(move |x| (x.as_str(), i))).collect();
            prop_assert_eq!(at.len(), n);
            for (late, early) in &edges {
                prop_assert!(at[late.as_str()] > at[early.as_str()]);
            }
            for (id, &st) in &at {
                if st > 0 {
                    prop_assert!(edges.iter().any(|(l, early)| l == id && at[early.as_str()] == st - 1));
                }
            }
        }
    }
}
