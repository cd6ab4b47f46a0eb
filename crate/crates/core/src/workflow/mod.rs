//! The CPS1-CPS5 delegation workflow as a fold over an append-only event
//! log, with validation gates, sub-delegation and drift.

mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Model, Problem};

pub use log::{append_events, read_log, LogRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CpsState {
    #[serde(rename = "CPS1")]
    Cps1,
    #[serde(rename = "CPS2")]
    Cps2,
    #[serde(rename = "CPS3")]
    Cps3,
    #[serde(rename = "CPS4")]
    Cps4,
    #[serde(rename = "CPS5")]
    Cps5,
    Done,
}

impl fmt::Display for CpsState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CpsState::Cps1 => "CPS1",
            CpsState::Cps2 => "CPS2",
            CpsState::Cps3 => "CPS3",
            CpsState::Cps4 => "CPS4",
            CpsState::Cps5 => "CPS5",
            CpsState::Done => "Done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationTarget {
    ProblemView,
    SolutionPlan,
    GreenfieldDischarge,
}

impl fmt::Display for ValidationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationTarget::ProblemView => "problem-view",
            ValidationTarget::SolutionPlan => "solution+plan",
            ValidationTarget::GreenfieldDischarge => "greenfield-discharge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationStatus {
    Pending,
    Granted,
    Rejected,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub id: String,
    pub stakeholder: String,
    pub target: ValidationTarget,
    /// Workflow id, or a derivation node path for greenfield discharges.
    pub subject: String,
    pub status: ValidationStatus,
    /// Sequence of the event that last set `status`.
    pub sequence: u64,
    /// Names whose drift makes a grant stale.
    pub references: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftOrigin {
    Environment,
    Need,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplementationMode {
    SelfImplement,
    Delegated,
}

/// Everything that can happen to a workflow. Serialized as the `event` and
/// `payload` fields of a log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "kebab-case")]
pub enum Event {
    Create {
        owner: String,
        delegate: String,
        problem: Problem,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<String>,
    },
    SubmitView {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        view: Option<Problem>,
    },
    RequestValidation {
        target: ValidationTarget,
    },
    RecordValidation {
        stakeholder: String,
        granted: bool,
    },
    SubmitSolution {
        solution: String,
        #[serde(default)]
        references: BTreeSet<String>,
    },
    Delegate {
        child: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        problem: Option<Problem>,
    },
    BeginImplementation {
        mode: ImplementationMode,
    },
    Complete,
    Drift {
        touched: BTreeSet<String>,
        description: String,
        origin: DriftOrigin,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Create { .. } => "create",
            Event::SubmitView { .. } => "submit-view",
            Event::RequestValidation { .. } => "request-validation",
            Event::RecordValidation { .. } => "record-validation",
            Event::SubmitSolution { .. } => "submit-solution",
            Event::Delegate { .. } => "delegate",
            Event::BeginImplementation { .. } => "begin-implementation",
            Event::Complete => "complete",
            Event::Drift { .. } => "drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("illegal transition: {event} in state {state}")]
    IllegalTransition { state: CpsState, event: String },
    #[error("only {expected} may validate here, not {got}")]
    WrongStakeholder { expected: String, got: String },
    #[error("{from} does not trust {to}")]
    TrustMissing { from: String, to: String },
    #[error("cannot delegate in state {0}")]
    IllegalState(CpsState),
    #[error("no workflow '{0}'")]
    UnknownWorkflow(String),
    #[error("workflow '{0}' already exists")]
    DuplicateWorkflow(String),
    #[error("sub-workflows not far enough along: {}", .0.join(", "))]
    ChildrenPending(Vec<String>),
    #[error("drift must touch at least one name")]
    EmptyDrift,
    #[error("log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Regression {
    pub sequence: u64,
    pub from: CpsState,
    pub to: CpsState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Workflow {
    pub id: String,
    pub owner: String,
    pub delegate: String,
    pub problem: Problem,
    pub state: CpsState,
    pub parent: Option<String>,
    /// Sub-workflows with the parent state they were created in.
    pub children: Vec<(String, CpsState)>,
    pub validations: Vec<ValidationRecord>,
    pub solution: Option<String>,
    pub solution_references: BTreeSet<String>,
    pub implementation: Option<ImplementationMode>,
    pub regressions: Vec<Regression>,
    pub log: Vec<u64>,
}

impl Workflow {
    fn pending(&self, target: ValidationTarget) -> Option<usize> {
        self.validations
            .iter()
            .rposition(|v| v.target == target && v.status == ValidationStatus::Pending)
    }

    /// The newest record for `target`.
    pub fn latest(&self, target: ValidationTarget) -> Option<&ValidationRecord> {
        self.validations.iter().rev().find(|v| v.target == target)
    }

    pub fn has_live_grant(&self, target: ValidationTarget) -> bool {
        self.latest(target).is_some_and(|v| v.status == ValidationStatus::Granted)
    }

    pub fn stale(&self) -> Vec<&ValidationRecord> {
        self.validations.iter().filter(|v| v.status == ValidationStatus::Stale).collect()
    }

    fn references(&self, target: ValidationTarget) -> BTreeSet<String> {
        let mut refs = self.problem.references();
        if target == ValidationTarget::SolutionPlan {
            refs.extend(self.solution_references.iter().cloned());
        }
        refs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StaleRecord {
    pub workflow: String,
    pub record: String,
    pub target: ValidationTarget,
    pub granted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DriftReport {
    pub sequence: u64,
    pub touched: BTreeSet<String>,
    pub stale: Vec<StaleRecord>,
    pub regressions: Vec<(String, CpsState, CpsState)>,
}

impl DriftReport {
    pub fn is_empty(&self) -> bool {
        self.stale.is_empty() && self.regressions.is_empty()
    }
}

/// All workflows of one log, folded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Registry {
    pub workflows: BTreeMap<String, Workflow>,
    pub sequence: u64,
    pub drifts: Vec<DriftReport>,
}

/// Workflow id used on drift lines, which concern every workflow.
pub const ALL: &str = "*";

fn illegal(state: CpsState, event: &Event) -> WorkflowError {
    WorkflowError::IllegalTransition {
        state,
        event: event.kind().to_string(),
    }
}

impl Registry {
    pub fn get(&self, id: &str) -> Result<&Workflow, WorkflowError> {
        self.workflows.get(id).ok_or_else(|| WorkflowError::UnknownWorkflow(id.to_string()))
    }

    /// Rebuilds the registry from log records, failing at the first record
    /// that is out of order or not legal.
    pub fn replay(records: &[LogRecord]) -> Result<Registry, (usize, WorkflowError)> {
        let mut reg = Registry::default();
        for (i, r) in records.iter().enumerate() {
            if r.sequence != reg.sequence + 1 {
                return Err((
                    i,
                    WorkflowError::Corrupt {
                        line: i + 1,
                        message: format!("sequence {} follows {}", r.sequence, reg.sequence),
                    },
                ));
            }
            let event = r.event().map_err(|m| (i, WorkflowError::Corrupt { line: i + 1, message: m }))?;
            reg.apply(&r.workflow, event).map_err(|e| (i, e))?;
        }
        Ok(reg)
    }

    /// Applies one event. On success the event has been given the next
    /// sequence number and its log record is returned.
    pub fn apply(&mut self, workflow: &str, event: Event) -> Result<LogRecord, WorkflowError> {
        let seq = self.sequence + 1;
        match &event {
            Event::Create {
                owner,
                delegate,
                problem,
                parent,
            } => {
                if self.workflows.contains_key(workflow) || workflow == ALL {
                    return Err(WorkflowError::DuplicateWorkflow(workflow.to_string()));
                }
                if let Some(p) = parent {
                    self.get(p)?;
                }
                self.workflows.insert(
                    workflow.to_string(),
                    Workflow {
                        id: workflow.to_string(),
                        owner: owner.clone(),
                        delegate: delegate.clone(),
                        problem: problem.clone(),
                        state: CpsState::Cps1,
                        parent: parent.clone(),
                        children: Vec::new(),
                        validations: Vec::new(),
                        solution: None,
                        solution_references: BTreeSet::new(),
                        implementation: None,
                        regressions: Vec::new(),
                        log: vec![seq],
                    },
                );
            }
            Event::Drift { touched, .. } => {
                if touched.is_empty() {
                    return Err(WorkflowError::EmptyDrift);
                }
                let report = self.drift_at(seq, touched);
                self.drifts.push(report);
            }
            Event::Delegate { child, to, problem: sub } => {
                let wf = self.get(workflow)?;
                let owner = match wf.state {
                    CpsState::Cps3 => wf.delegate.clone(),
                    CpsState::Cps5 => wf.owner.clone(),
                    s => return Err(WorkflowError::IllegalState(s)),
                };
                if self.workflows.contains_key(child) {
                    return Err(WorkflowError::DuplicateWorkflow(child.clone()));
                }
                let state = wf.state;
                let problem = sub.clone().unwrap_or_else(|| wf.problem.clone());
                let parent = self.workflows.get_mut(workflow).expect("checked");
                parent.children.push((child.clone(), state));
                parent.log.push(seq);
                self.workflows.insert(
                    child.clone(),
                    Workflow {
                        id: child.clone(),
                        owner,
                        delegate: to.clone(),
                        problem,
                        state: CpsState::Cps1,
                        parent: Some(workflow.to_string()),
                        children: Vec::new(),
                        validations: Vec::new(),
                        solution: None,
                        solution_references: BTreeSet::new(),
                        implementation: None,
                        regressions: Vec::new(),
                        log: vec![seq],
                    },
                );
            }
            _ => self.transition(workflow, &event, seq)?,
        }
        self.sequence = seq;
        Ok(LogRecord::new(seq, workflow, &event))
    }

    fn children_below(&self, wf: &Workflow, created_in: Option<CpsState>, at_least: CpsState) -> Vec<String> {
        wf.children
            .iter()
            .filter(|(_, s)| created_in.is_none_or(|c| c == *s))
            .filter(|(c, _)| self.workflows.get(c).is_none_or(|w| w.state < at_least))
            .map(|(c, _)| c.clone())
            .collect()
    }

    fn transition(&mut self, id: &str, event: &Event, seq: u64) -> Result<(), WorkflowError> {
        let wf = self.get(id)?;
        let state = wf.state;
        let mut next = wf.clone();
        match (state, event) {
            (CpsState::Cps1, Event::SubmitView { view }) => {
                if let Some(v) = view {
                    next.problem = v.clone();
                }
                next.state = CpsState::Cps2;
            }
            (CpsState::Cps2 | CpsState::Cps4, Event::RequestValidation { target }) => {
                let wanted = if state == CpsState::Cps2 {
                    ValidationTarget::ProblemView
                } else {
                    ValidationTarget::SolutionPlan
                };
                if *target != wanted || wf.pending(wanted).is_some() {
                    return Err(illegal(state, event));
                }
                next.validations.push(ValidationRecord {
                    id: format!("{id}/v{seq}"),
                    stakeholder: wf.owner.clone(),
                    target: wanted,
                    subject: id.to_string(),
                    status: ValidationStatus::Pending,
                    sequence: seq,
                    references: wf.references(wanted),
                });
            }
            (CpsState::Cps2 | CpsState::Cps4, Event::RecordValidation { stakeholder, granted }) => {
                let target = if state == CpsState::Cps2 {
                    ValidationTarget::ProblemView
                } else {
                    ValidationTarget::SolutionPlan
                };
                let Some(i) = wf.pending(target) else {
                    return Err(illegal(state, event));
                };
                if *stakeholder != wf.validations[i].stakeholder {
                    return Err(WorkflowError::WrongStakeholder {
                        expected: wf.validations[i].stakeholder.clone(),
                        got: stakeholder.clone(),
                    });
                }
                if *granted && state == CpsState::Cps4 {
                    let pending = self.children_below(wf, Some(CpsState::Cps3), CpsState::Cps5);
                    if !pending.is_empty() {
                        return Err(WorkflowError::ChildrenPending(pending));
                    }
                }
                let rec = &mut next.validations[i];
                rec.status = if *granted {
                    ValidationStatus::Granted
                } else {
                    ValidationStatus::Rejected
                };
                rec.sequence = seq;
                rec.references = wf.references(target);
                next.state = match (state, granted) {
                    (CpsState::Cps2, true) => CpsState::Cps3,
                    (CpsState::Cps2, false) => CpsState::Cps1,
                    (_, true) => CpsState::Cps5,
                    (_, false) => CpsState::Cps3,
                };
            }
            (CpsState::Cps3, Event::SubmitSolution { solution, references }) => {
                next.solution = Some(solution.clone());
                next.solution_references = references.clone();
                next.state = CpsState::Cps4;
            }
            (CpsState::Cps5, Event::BeginImplementation { mode }) if wf.implementation.is_none() => {
                next.implementation = Some(*mode);
            }
            (CpsState::Cps5, Event::Complete) if wf.implementation.is_some() => {
                let pending = self.children_below(wf, None, CpsState::Done);
                if !pending.is_empty() {
                    return Err(WorkflowError::ChildrenPending(pending));
                }
                next.state = CpsState::Done;
            }
            _ => return Err(illegal(state, event)),
        }
        next.log.push(seq);
        self.workflows.insert(id.to_string(), next);
        Ok(())
    }

    fn drift_at(&mut self, seq: u64, touched: &BTreeSet<String>) -> DriftReport {
        let mut report = DriftReport {
            sequence: seq,
            touched: touched.clone(),
            stale: Vec::new(),
            regressions: Vec::new(),
        };
        for wf in self.workflows.values_mut() {
            for v in wf.validations.iter_mut() {
                if v.status == ValidationStatus::Granted && v.sequence < seq && !v.references.is_disjoint(touched) {
                    v.status = ValidationStatus::Stale;
                    report.stale.push(StaleRecord {
                        workflow: wf.id.clone(),
                        record: v.id.clone(),
                        target: v.target,
                        granted_at: v.sequence,
                    });
                    v.sequence = seq;
                }
            }
            let view_stale = wf.latest(ValidationTarget::ProblemView).is_some_and(|v| v.status == ValidationStatus::Stale);
            let solution_stale = wf.latest(ValidationTarget::SolutionPlan).is_some_and(|v| v.status == ValidationStatus::Stale);
            let to = match wf.state {
                CpsState::Cps3 | CpsState::Cps4 | CpsState::Cps5 if view_stale => CpsState::Cps2,
                CpsState::Cps5 if solution_stale => CpsState::Cps4,
                _ => continue,
            };
            let target = if to == CpsState::Cps2 {
                ValidationTarget::ProblemView
            } else {
                ValidationTarget::SolutionPlan
            };
            // a pending request left over from the old state no longer applies
            wf.validations.retain(|v| v.status != ValidationStatus::Pending);
            let references = wf.references(target);
            wf.validations.push(ValidationRecord {
                id: format!("{}/v{seq}", wf.id),
                stakeholder: wf.owner.clone(),
                target,
                subject: wf.id.clone(),
                status: ValidationStatus::Pending,
                sequence: seq,
                references,
            });
            wf.regressions.push(Regression {
                sequence: seq,
                from: wf.state,
                to,
            });
            report.regressions.push((wf.id.clone(), wf.state, to));
            wf.state = to;
            wf.implementation = None;
            wf.log.push(seq);
        }
        report
    }

    /// Starts a root workflow: `owner` delegates `problem` to `delegate`.
    pub fn start(&mut self, model: &Model, id: &str, owner: &str, delegate: &str, problem: Problem) -> Result<LogRecord, WorkflowError> {
        if !model.trusts(owner, delegate) {
            return Err(WorkflowError::TrustMissing {
                from: owner.to_string(),
                to: delegate.to_string(),
            });
        }
        self.apply(
            id,
            Event::Create {
                owner: owner.to_string(),
                delegate: delegate.to_string(),
                problem,
                parent: None,
            },
        )
    }

    /// Sub-delegation from a workflow in CPS3 (by its delegate) or CPS5
    /// (by its owner, for implementation).
    pub fn delegate(
        &mut self,
        model: &Model,
        parent: &str,
        child: &str,
        to: &str,
        sub: Option<Problem>,
    ) -> Result<LogRecord, WorkflowError> {
        let wf = self.get(parent)?;
        let from = match wf.state {
            CpsState::Cps3 => &wf.delegate,
            CpsState::Cps5 => &wf.owner,
            s => return Err(WorkflowError::IllegalState(s)),
        };
        if !model.trusts(from, to) {
            return Err(WorkflowError::TrustMissing {
                from: from.clone(),
                to: to.to_string(),
            });
        }
        self.apply(
            parent,
            Event::Delegate {
                child: child.to_string(),
                to: to.to_string(),
                problem: sub,
            },
        )
    }

    /// Records a drift and returns what it invalidated.
    pub fn drift(&mut self, touched: BTreeSet<String>, description: &str, origin: DriftOrigin) -> Result<(LogRecord, DriftReport), WorkflowError> {
        let rec = self.apply(
            ALL,
            Event::Drift {
                touched,
                description: description.to_string(),
                origin,
            },
        )?;
        Ok((rec, self.drifts.last().expect("just pushed").clone()))
    }

    /// Events legal for `id` in its current state, as templates.
    pub fn enabled(&self, id: &str) -> Vec<&'static str> {
        let Some(wf) = self.workflows.get(id) else {
            return Vec::new();
        };
        match wf.state {
            CpsState::Cps1 => vec!["submit-view"],
            CpsState::Cps2 | CpsState::Cps4 => {
                let target = if wf.state == CpsState::Cps2 {
                    ValidationTarget::ProblemView
                } else {
                    ValidationTarget::SolutionPlan
                };
                if wf.pending(target).is_some() {
                    vec!["record-validation"]
                } else {
                    vec!["request-validation"]
                }
            }
            CpsState::Cps3 => vec!["submit-solution", "delegate"],
            CpsState::Cps5 if wf.implementation.is_none() => vec!["begin-implementation", "delegate"],
            CpsState::Cps5 => vec!["complete", "delegate"],
            CpsState::Done => Vec::new(),
        }
    }

    pub fn status_text(&self) -> String {
        let mut out = String::new();
        for wf in self.workflows.values() {
            let _ = write!(out, "{} {} (owner {}, delegate {}", wf.id, wf.state, wf.owner, wf.delegate);
            if let Some(p) = &wf.parent {
                let _ = write!(out, ", parent {p}");
            }
            out.push_str(")\n");
            let _ = writeln!(out, "  problem: {}", wf.problem);
            if let Some(s) = &wf.solution {
                let _ = writeln!(out, "  solution: {s}");
            }
            for v in &wf.validations {
                let status = match v.status {
                    ValidationStatus::Pending => "pending",
                    ValidationStatus::Granted => "granted",
                    ValidationStatus::Rejected => "rejected",
                    ValidationStatus::Stale => "stale",
                };
                let _ = writeln!(out, "  validation {} {} by {}: {status} @{}", v.id, v.target, v.stakeholder, v.sequence);
            }
            for r in &wf.regressions {
                let _ = writeln!(out, "  regressed {} -> {} @{}", r.from, r.to, r.sequence);
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_model, parse_problem};

    fn setup() -> (Model, Problem) {
        let m = parse_model(
            "model DevEnv { domain OldAPI { controls api.call } phenomenon api.call : event
             proposed domain NewAPI { }
             stakeholder G : problem-owner { trusts D } stakeholder D : problem-solving-delegate { trusts E }
             stakeholder E : problem-solving-delegate need UpdateAPI }",
        )
        .unwrap();
        let p = parse_problem("problem p { DevEnv[OldAPI] (+) ?F |= G : UpdateAPI }", &m).unwrap();
        (m, p)
    }

    fn to_cps3(reg: &mut Registry, m: &Model, p: &Problem) {
        reg.start(m, "w", "G", "D", p.clone()).unwrap();
        reg.apply("w", Event::SubmitView { view: None }).unwrap();
        reg.apply("w", Event::RequestValidation { target: ValidationTarget::ProblemView }).unwrap();
        reg.apply("w", Event::RecordValidation { stakeholder: "G".into(), granted: true }).unwrap();
    }

    #[test]
    fn rejection_loops_back() {
        let (m, p) = setup();
        let mut reg = Registry::default();
        reg.start(&m, "w", "G", "D", p).unwrap();
        reg.apply("w", Event::SubmitView { view: None }).unwrap();
        assert_eq!(reg.get("w").unwrap().state, CpsState::Cps2);
        reg.apply("w", Event::RequestValidation { target: ValidationTarget::ProblemView }).unwrap();
        let err = reg.apply("w", Event::RecordValidation { stakeholder: "D".into(), granted: true }).unwrap_err();
        assert!(matches!(err, WorkflowError::WrongStakeholder { .. }));
        reg.apply("w", Event::RecordValidation { stakeholder: "G".into(), granted: false }).unwrap();
        assert_eq!(reg.get("w").unwrap().state, CpsState::Cps1);
    }

    #[test]
    fn complete_not_enabled_in_cps3() {
        let (m, p) = setup();
        let mut reg = Registry::default();
        to_cps3(&mut reg, &m, &p);
        let err = reg.apply("w", Event::Complete).unwrap_err();
        assert_eq!(err.to_string(), "illegal transition: complete in state CPS3");
    }

    #[test]
    fn start_needs_trust() {
        let (m, p) = setup();
        let err = Registry::default().start(&m, "w", "G", "E", p).unwrap_err();
        assert!(matches!(err, WorkflowError::TrustMissing { .. }));
    }

    #[test]
    fn parent_solution_waits_for_children() {
        let (m, p) = setup();
        let mut reg = Registry::default();
        to_cps3(&mut reg, &m, &p);
        reg.delegate(&m, "w", "c", "E", None).unwrap();
        assert_eq!(reg.get("c").unwrap().owner, "D");
        reg.apply("w", Event::SubmitSolution { solution: "!OldAPI".into(), references: BTreeSet::new() }).unwrap();
        reg.apply("w", Event::RequestValidation { target: ValidationTarget::SolutionPlan }).unwrap();
        let err = reg.apply("w", Event::RecordValidation { stakeholder: "G".into(), granted: true }).unwrap_err();
        assert_eq!(err, WorkflowError::ChildrenPending(vec!["c".into()]));
    }

    #[test]
    fn drift_on_unreferenced_name_is_empty() {
        let (m, p) = setup();
        let mut reg = Registry::default();
        to_cps3(&mut reg, &m, &p);
        let (_, report) = reg.drift(["Payroll".to_string()].into(), "unrelated", DriftOrigin::Environment).unwrap();
        assert!(report.is_empty());
        let (_, report) = reg.drift(["OldAPI".to_string()].into(), "patched", DriftOrigin::Environment).unwrap();
        assert_eq!(report.regressions, vec![("w".to_string(), CpsState::Cps3, CpsState::Cps2)]);
    }
}
