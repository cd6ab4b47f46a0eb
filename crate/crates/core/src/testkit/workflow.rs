//! Random legal workflow runs with gate checks, and illegal-event
//! injection.

use std::collections::BTreeSet;

use proptest::prelude::*;

use crate::dsl::{parse_model, parse_problem};
use crate::model::Problem;
use crate::workflow::{CpsState, DriftOrigin, Event, ImplementationMode, LogRecord, Registry, ValidationStatus, ValidationTarget};

pub const KINDS: [&str; 7] = [
    "submit-view",
    "request-validation",
    "record-validation",
    "submit-solution",
    "delegate",
    "begin-implementation",
    "complete",
];

/// Choices driving one run: (workflow pick, event pick, payload pick).
pub type Choices = Vec<(u8, u8, u8)>;

pub fn choices(max: usize) -> impl Strategy<Value = Choices> {
    prop::collection::vec((any::<u8>(), any::<u8>(), any::<u8>()), 0..max)
}

fn problem() -> Problem {
    let m = parse_model(
        "model DevEnv { domain OldAPI { controls api.call } phenomenon api.call : event
         stakeholder G : problem-owner need UpdateAPI }",
    )
    .expect("workflow model parses");
    parse_problem("problem p { DevEnv[OldAPI] (+) ?F |= G : UpdateAPI }", &m).expect("workflow problem parses")
}

fn target(state: CpsState) -> ValidationTarget {
    if state == CpsState::Cps2 {
        ValidationTarget::ProblemView
    } else {
        ValidationTarget::SolutionPlan
    }
}

fn children_at_least(reg: &Registry, id: &str, created_in: Option<CpsState>, at: CpsState) -> bool {
    reg.workflows[id]
        .children
        .iter()
        .filter(|(_, s)| created_in.is_none_or(|c| c == *s))
        .all(|(c, _)| reg.workflows[c].state >= at)
}

/// Builds the event of `kind` for workflow `id`; `legal` steers choices
/// away from gate refusals.
pub fn make(reg: &Registry, id: &str, kind: &str, pick: u8, legal: bool) -> Event {
    let wf = &reg.workflows[id];
    match kind {
        "submit-view" => Event::SubmitView { view: None },
        "request-validation" => Event::RequestValidation { target: target(wf.state) },
        "record-validation" => {
            let ok = !legal || wf.state != CpsState::Cps4 || children_at_least(reg, id, Some(CpsState::Cps3), CpsState::Cps5);
            Event::RecordValidation {
                stakeholder: wf.owner.clone(),
                granted: ok && !pick.is_multiple_of(3),
            }
        }
        "submit-solution" => {
            let refs = ["OldAPI", "NewAPI"].iter().take(1 + (pick as usize % 2)).map(|s| s.to_string()).collect();
            Event::SubmitSolution {
                solution: "OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI'".into(),
                references: refs,
            }
        }
        "delegate" => Event::Delegate {
            child: format!("{id}.{}", reg.sequence + 1),
            to: "E".into(),
            problem: None,
        },
        "begin-implementation" => Event::BeginImplementation {
            mode: if pick.is_multiple_of(2) {
                ImplementationMode::SelfImplement
            } else {
                ImplementationMode::Delegated
            },
        },
        "complete" => Event::Complete,
        other => panic!("unknown event kind {other}"),
    }
}

fn legal_kinds(reg: &Registry, id: &str) -> Vec<&'static str> {
    reg.enabled(id)
        .into_iter()
        .filter(|k| *k != "complete" || children_at_least(reg, id, None, CpsState::Done))
        .filter(|k| *k != "delegate" || reg.workflows[id].children.len() < 2)
        .collect()
}

/// Gates: CPS3 and CPS5 are entered only on a fresh owner grant, Done only
/// with every child Done, and only owners grant.
pub fn check_gates(before: &Registry, after: &Registry, seq: u64) -> Result<(), TestCaseError> {
    for (id, wf) in &after.workflows {
        let old = before.workflows.get(id).map(|w| w.state);
        let fresh = |t: ValidationTarget| {
            wf.latest(t)
                .is_some_and(|v| v.status == ValidationStatus::Granted && v.sequence == seq && v.stakeholder == wf.owner)
        };
        if wf.state == CpsState::Cps3 && old == Some(CpsState::Cps2) {
            prop_assert!(fresh(ValidationTarget::ProblemView), "{id} reached CPS3 without a grant");
        }
        if wf.state == CpsState::Cps5 && old == Some(CpsState::Cps4) {
            prop_assert!(fresh(ValidationTarget::SolutionPlan), "{id} reached CPS5 without a grant");
        }
        if wf.state == CpsState::Done {
            for (c, _) in &wf.children {
                prop_assert_eq!(after.workflows[c].state, CpsState::Done);
            }
        }
        for v in &wf.validations {
            if v.status == ValidationStatus::Granted {
                prop_assert_eq!(&v.stakeholder, &wf.owner);
            }
        }
    }
    Ok(())
}

/// Drives a random legal run, with occasional drift, checking gates after
/// every event. Returns the log and final registry.
pub fn legal_run(choices: &[(u8, u8, u8)]) -> Result<(Vec<LogRecord>, Registry), TestCaseError> {
    let mut reg = Registry::default();
    let create = Event::Create {
        owner: "G".into(),
        delegate: "D".into(),
        problem: problem(),
        parent: None,
    };
    let mut log = vec![reg.apply("w", create).map_err(|e| TestCaseError::fail(e.to_string()))?];
    for &(w, k, pick) in choices {
        let before = reg.clone();
        let rec = if pick % 11 == 0 {
            let touched: BTreeSet<String> = [["OldAPI", "NewAPI", "Payroll"][k as usize % 3].to_string()].into();
            reg.drift(touched, "drift", DriftOrigin::Environment).map_err(|e| TestCaseError::fail(e.to_string()))?.0
        } else {
            let live: Vec<String> = reg.workflows.keys().filter(|id| !legal_kinds(&reg, id).is_empty()).cloned().collect();
            if live.is_empty() {
                break;
            }
            let id = &live[w as usize % live.len()];
            let kinds = legal_kinds(&reg, id);
            let kind = kinds[k as usize % kinds.len()];
            let ev = make(&reg, id, kind, pick, true);
            reg.apply(id, ev.clone())
                .map_err(|e| TestCaseError::fail(format!("legal {ev:?} on {id} refused: {e}")))?
        };
        check_gates(&before, &reg, rec.sequence)?;
        log.push(rec);
    }
    Ok((log, reg))
}

/// A legal run keeps the gates and replays to the same registry.
pub fn legal_case(choices: &[(u8, u8, u8)]) -> Result<(), TestCaseError> {
    let (log, reg) = legal_run(choices)?;
    let replayed = Registry::replay(&log).map_err(|(i, e)| TestCaseError::fail(format!("replay failed at {i}: {e}")))?;
    prop_assert_eq!(replayed, reg);
    Ok(())
}

/// After a legal prefix, a disabled event is refused without changing the
/// registry, and replay of a log containing it fails at that record.
pub fn illegal_case(choices: &[(u8, u8, u8)], w: u8, k: u8) -> Result<(), TestCaseError> {
    let (mut log, mut reg) = legal_run(choices)?;
    let ids: Vec<String> = reg.workflows.keys().cloned().collect();
    let id = &ids[w as usize % ids.len()];
    let enabled = reg.enabled(id);
    let disabled: Vec<&str> = KINDS.iter().copied().filter(|x| !enabled.contains(x)).collect();
    let kind = disabled[k as usize % disabled.len()];
    let ev = make(&reg, id, kind, k, false);
    let before = reg.clone();
    prop_assert!(reg.apply(id, ev.clone()).is_err(), "{kind} accepted in {}", before.workflows[id].state);
    prop_assert_eq!(&reg, &before);
    let at = log.len();
    log.push(LogRecord::new(reg.sequence + 1, id, &ev));
    let err = Registry::replay(&log).map_err(|(i, _)| i);
    prop_assert_eq!(err, Err(at));
    Ok(())
}
