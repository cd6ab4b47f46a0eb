use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};

use super::types::*;
use crate::dsl::Pos;
use crate::model::{
    apply_change, fold_right, shared_phenomena, ChangeExpr, Environment, Model, Need, Problem,
    RefineTarget, Refinement,
};

/// What a derivation node claims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conclusion {
    /// A change problem `E (+) F |= G : N`.
    Change(Problem),
    /// A greenfield problem left by a bridging rule; closed by `discharge`.
    Greenfield {
        env: Environment,
        focus: Vec<String>,
        validator: String,
        need: Need,
    },
    /// Second premise of a sequence before the first premise's change is
    /// known: its environment is `problem.env (+) after`.
    Threaded { problem: Problem, after: ChangeExpr },
}

impl Conclusion {
    pub fn validator(&self) -> &str {
        match self {
            Conclusion::Change(p) | Conclusion::Threaded { problem: p, .. } => &p.validator,
            Conclusion::Greenfield { validator, .. } => validator,
        }
    }

    pub fn need(&self) -> &Need {
        match self {
            Conclusion::Change(p) | Conclusion::Threaded { problem: p, .. } => &p.need,
            Conclusion::Greenfield { need, .. } => need,
        }
    }

    pub fn is_greenfield(&self) -> bool {
        matches!(self, Conclusion::Greenfield { .. })
    }

    fn substituted(&self, bindings: &BTreeMap<String, ChangeExpr>) -> Conclusion {
        match self {
            Conclusion::Change(p) => Conclusion::Change(Problem {
                change: p.change.substitute(bindings),
                ..p.clone()
            }),
            Conclusion::Threaded { problem, after } => Conclusion::Threaded {
                problem: Problem {
                    change: problem.change.substitute(bindings),
                    ..problem.clone()
                },
                after: after.substitute(bindings),
            },
            g => g.clone(),
        }
    }
}

impl fmt::Display for Conclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conclusion::Change(p) => write!(f, "{p}"),
            Conclusion::Greenfield {
                env,
                validator,
                need,
                ..
            } => write!(f, "{env} |= {validator} : {need}"),
            Conclusion::Threaded { problem, after } => write!(
                f,
                "({} (+) {after}) (+) {} |= {} : {}",
                problem.env, problem.change, problem.validator, problem.need
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Open,
    Applied(RuleId),
    Discharged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlternativeRecord {
    pub name: String,
    pub chosen: bool,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationNode {
    pub path: NodePath,
    pub conclusion: Conclusion,
    pub state: NodeState,
    pub premises: Vec<DerivationNode>,
    pub justification: Justification,
    pub plan: PlanFragment,
    /// Values computed while checking (shared phenomena, trust edge, ...).
    pub evidence: BTreeMap<String, Value>,
    pub validations: Vec<ValidationClause>,
    /// `evidence { .. }` entries from the script, kept for the record only.
    pub claimed_evidence: Vec<(String, String)>,
    pub alternatives: Vec<AlternativeRecord>,
}

impl DerivationNode {
    pub fn open(path: NodePath, conclusion: Conclusion) -> Self {
        DerivationNode {
            path,
            conclusion,
            state: NodeState::Open,
            premises: Vec::new(),
            justification: Justification::default(),
            plan: PlanFragment::default(),
            evidence: BTreeMap::new(),
            validations: Vec::new(),
            claimed_evidence: Vec::new(),
            alternatives: Vec::new(),
        }
    }

    pub fn rule(&self) -> Option<RuleId> {
        match self.state {
            NodeState::Applied(r) => Some(r),
            _ => None,
        }
    }

    pub fn get(&self, path: &NodePath) -> Option<&DerivationNode> {
        let mut n = self;
        for &i in path.0.get(self.path.0.len()..)? {
            n = n.premises.get(i)?;
        }
        Some(n)
    }

    fn get_mut(&mut self, path: &NodePath) -> Option<&mut DerivationNode> {
        let skip = self.path.0.len();
        let mut n = self;
        for &i in path.0.get(skip..)? {
            n = n.premises.get_mut(i)?;
        }
        Some(n)
    }

    /// This node and its descendants, depth first, premises in order.
    pub fn walk(&self) -> Vec<&DerivationNode> {
        let mut out = vec![self];
        for p in &self.premises {
            out.extend(p.walk());
        }
        out
    }

    /// Whether the validator granted this node (and nobody rejected it).
    pub fn granted(&self) -> bool {
        let v = self.conclusion.validator();
        self.validations.iter().any(|c| c.stakeholder == v && c.granted)
            && !self.validations.iter().any(|c| c.stakeholder == v && !c.granted)
    }

    /// Needs a validator's grant to count as closed.
    pub fn needs_validation(&self) -> bool {
        self.state == NodeState::Discharged || self.rule() == Some(RuleId::KnownSolution)
    }

    pub fn steps(&self) -> Vec<&PlanStep> {
        self.walk().into_iter().flat_map(|n| n.plan.steps.iter()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DiagnosticClass {
    ArityMismatch,
    NotOpen,
    UnknownNode,
    ShapeMismatch,
    BadArgument,
    TrustMissing,
    SideConditionViolated,
    ThreadingMismatch,
    MissingValidation,
    WrongValidator,
    MissingJustification,
    MissingPlanConstraint,
    PlanMismatch,
    DuplicateStep,
    CycleDetected,
    ChangeFailed,
    PlaceholderConflict,
    AlternativeChoice,
}

impl DiagnosticClass {
    /// Classes reported by `lint`: artefact completeness rather than logic.
    pub fn is_lint(self) -> bool {
        matches!(
            self,
            DiagnosticClass::MissingJustification
                | DiagnosticClass::MissingPlanConstraint
                | DiagnosticClass::PlanMismatch
                | DiagnosticClass::DuplicateStep
                | DiagnosticClass::CycleDetected
        )
    }
}

impl fmt::Display for DiagnosticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckDiagnostic {
    pub class: DiagnosticClass,
    pub path: NodePath,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos: Option<Pos>,
    /// The offending names: shared phenomena, missing fields, step ids.
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub detail: BTreeSet<String>,
}

impl CheckDiagnostic {
    pub fn new(class: DiagnosticClass, path: &NodePath, message: impl Into<String>) -> Self {
        CheckDiagnostic {
            class,
            path: path.clone(),
            message: message.into(),
            pos: None,
            detail: BTreeSet::new(),
        }
    }

    pub fn with_detail<I: IntoIterator<Item = String>>(mut self, detail: I) -> Self {
        self.detail.extend(detail);
        self
    }
}

impl fmt::Display for CheckDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(pos) = self.pos {
            write!(f, "{pos}: ")?;
        }
        write!(f, "{}: {}: {}", self.path, self.class, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Solved,
    /// Open leaves and nodes whose validation was not granted.
    Incomplete(Vec<NodePath>),
    Invalid(Vec<CheckDiagnostic>),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Solved => "Solved",
            Verdict::Incomplete(_) => "Incomplete",
            Verdict::Invalid(_) => "Invalid",
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, Verdict::Solved)
    }
}

/// A replayed derivation.
#[derive(Debug, Clone)]
pub struct Derivation {
    pub name: String,
    pub root: DerivationNode,
    pub bindings: BTreeMap<String, ChangeExpr>,
    pub diagnostics: Vec<CheckDiagnostic>,
}

impl Derivation {
    pub fn verdict(&self) -> Verdict {
        if !self.diagnostics.is_empty() {
            return Verdict::Invalid(self.diagnostics.clone());
        }
        let pending = self.pending();
        if pending.is_empty() {
            Verdict::Solved
        } else {
            Verdict::Incomplete(pending)
        }
    }

    /// Open leaves plus validated leaves without a grant.
    pub fn pending(&self) -> Vec<NodePath> {
        self.root
            .walk()
            .into_iter()
            .filter(|n| n.state == NodeState::Open || (n.needs_validation() && !n.granted()))
            .map(|n| n.path.clone())
            .collect()
    }

    /// A node's conclusion with every known placeholder filled in.
    pub fn resolved(&self, node: &DerivationNode) -> Conclusion {
        node.conclusion.substituted(&self.bindings)
    }

    /// The change a node's subtree commits to. Greenfield nodes commit to
    /// their parent's change.
    pub fn committed_change(&self, path: &NodePath) -> Option<ChangeExpr> {
        let mut p = path.clone();
        loop {
            match &self.root.get(&p)?.conclusion {
                Conclusion::Change(pr) | Conclusion::Threaded { problem: pr, .. } => {
                    return Some(pr.change.substitute(&self.bindings))
                }
                Conclusion::Greenfield { .. } => {
                    p.0.pop()?;
                }
            }
        }
    }

    /// Environments of discharged greenfield premises, in tree order.
    pub fn discharged_environments(&self) -> Vec<(NodePath, Environment)> {
        self.root
            .walk()
            .into_iter()
            .filter(|n| n.state == NodeState::Discharged)
            .filter_map(|n| match &n.conclusion {
                Conclusion::Greenfield { env, .. } => Some((n.path.clone(), env.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn lint(&self) -> Vec<CheckDiagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.class.is_lint())
            .cloned()
            .collect()
    }
}

/// Replays rule applications against a model. Usable directly (`apply`,
/// `discharge`) or through [`check`].
#[derive(Debug, Clone)]
pub struct Session<'m> {
    model: &'m Model,
    pub root: DerivationNode,
    pub bindings: BTreeMap<String, ChangeExpr>,
    pub diagnostics: Vec<CheckDiagnostic>,
    used: BTreeSet<String>,
    failed: BTreeSet<NodePath>,
    second_claims: BTreeMap<NodePath, Problem>,
}

fn fail<T>(class: DiagnosticClass, path: &NodePath, message: impl Into<String>) -> Result<T, CheckDiagnostic> {
    Err(CheckDiagnostic::new(class, path, message))
}

fn allowed_args(rule: RuleId) -> (&'static [&'static str], &'static [&'static str]) {
    match rule {
        RuleId::Delegation => (&["delegate"], &["env", "need"]),
        RuleId::KnownSolution => (&[], &["solution"]),
        RuleId::EnvRefine => (&["env"], &[]),
        RuleId::NeedRefine => (&["need"], &[]),
        RuleId::SolnRefine => (&["solution"], &[]),
        RuleId::DomainAdd | RuleId::DomainRemove | RuleId::DomainRefine => (&[], &[]),
        RuleId::Parallel => (&["env", "need"], &["solution"]),
        RuleId::Sequence => (&[], &["first", "second"]),
        RuleId::SeqDomainRefineEquiv => (&["direction"], &[]),
        RuleId::SolutionReflect => (&[], &["solution"]),
    }
}

/// Justification fields each rule must carry.
pub fn required_fields(rule: RuleId) -> Vec<JField> {
    let mut out = vec![JField::Rule];
    match rule {
        RuleId::Delegation => out.extend([JField::Coordination, JField::Criteria]),
        RuleId::Parallel => out.push(JField::Dependency),
        RuleId::Sequence => out.extend([JField::Dependency, JField::Timeline]),
        _ => {}
    }
    out
}

fn same_shape(need: &Need, change: &ChangeExpr) -> bool {
    match (need, change) {
        (Need::Seq(a, b), ChangeExpr::Seq(c, d)) | (Need::Par(a, b), ChangeExpr::Par(c, d)) => {
            same_shape(a, c) && same_shape(b, d)
        }
        (Need::Atom { .. }, c) => !matches!(c, ChangeExpr::Seq(..) | ChangeExpr::Par(..)),
        _ => false,
    }
}

fn names(items: impl IntoIterator<Item = impl ToString>) -> Vec<String> {
    items.into_iter().map(|s| s.to_string()).collect()
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, goal: Problem) -> Self {
        let used = goal.change.unknowns();
        Session {
            model,
            root: DerivationNode::open(NodePath::root(), Conclusion::Change(goal)),
            bindings: BTreeMap::new(),
            diagnostics: Vec::new(),
            used,
            failed: BTreeSet::new(),
            second_claims: BTreeMap::new(),
        }
    }

    pub fn node(&self, path: &NodePath) -> Option<&DerivationNode> {
        self.root.get(path)
    }

    fn node_mut(&mut self, path: &NodePath) -> &mut DerivationNode {
        self.root.get_mut(path).expect("node checked to exist")
    }

    fn fresh(&mut self, base: &str) -> String {
        let mut i = 1;
        loop {
            let name = format!("{base}{i}");
            if !self.used.contains(&name) {
                self.used.insert(name.clone());
                return name;
            }
            i += 1;
        }
    }

    fn bind(&mut self, path: &NodePath, name: &str, value: ChangeExpr) -> Result<(), CheckDiagnostic> {
        if value == ChangeExpr::Unknown(name.to_string()) {
            return Ok(());
        }
        let value = value.substitute(&self.bindings);
        if value.unknowns().contains(name) {
            return fail(
                DiagnosticClass::PlaceholderConflict,
                path,
                format!("?{name} cannot be bound to {value}, which contains it"),
            );
        }
        if let Some(old) = self.bindings.get(name) {
            if old.substitute(&self.bindings) != value {
                return fail(
                    DiagnosticClass::PlaceholderConflict,
                    path,
                    format!("?{name} is already bound to {old}, not {value}"),
                );
            }
        }
        self.used.extend(value.unknowns());
        self.bindings.insert(name.to_string(), value);
        Ok(())
    }

    /// Binds the placeholders of `pattern` so that it becomes `target`.
    fn instantiate(&mut self, path: &NodePath, pattern: &ChangeExpr, target: &ChangeExpr) -> Result<(), CheckDiagnostic> {
        let mut local = BTreeMap::new();
        if !match_pattern(pattern, target, &mut local) {
            return fail(
                DiagnosticClass::ShapeMismatch,
                path,
                format!("{target} is not an instance of {pattern}"),
            );
        }
        for (name, value) in local {
            self.bind(path, &name, value)?;
        }
        Ok(())
    }

    /// The open change problem at `path`, placeholders substituted.
    fn open_problem(&mut self, path: &NodePath) -> Result<Problem, CheckDiagnostic> {
        let Some(node) = self.node(path) else {
            return fail(DiagnosticClass::UnknownNode, path, format!("no node {path}"));
        };
        if node.state != NodeState::Open {
            return fail(DiagnosticClass::NotOpen, path, format!("{path} has already been worked"));
        }
        if node.conclusion.is_greenfield() {
            return fail(
                DiagnosticClass::ShapeMismatch,
                path,
                "greenfield premise: close it with 'discharge'",
            );
        }
        self.resolve_threaded(path)?;
        match &self.node(path).expect("exists").conclusion {
            Conclusion::Change(p) => Ok(Problem {
                change: p.change.substitute(&self.bindings),
                ..p.clone()
            }),
            _ => unreachable!("threaded conclusions are resolved above"),
        }
    }

    /// Computes a sequence's second-premise environment from the first
    /// premise's committed change and checks any claim made about it.
    fn resolve_threaded(&mut self, path: &NodePath) -> Result<(), CheckDiagnostic> {
        let Some(Conclusion::Threaded { problem, after }) = self.node(path).map(|n| n.conclusion.clone()) else {
            return Ok(());
        };
        let after = after.substitute(&self.bindings);
        if let Some(p) = after.unknowns().into_iter().next() {
            return fail(
                DiagnosticClass::ThreadingMismatch,
                path,
                format!("environment depends on ?{p}, which the first premise has not fixed yet"),
            );
        }
        let env = apply_change(&problem.env, &after).map_err(|e| {
            CheckDiagnostic::new(
                DiagnosticClass::ChangeFailed,
                path,
                format!("threading {after} through {}: {e}", problem.env),
            )
            .with_detail([e.code().to_string()])
        })?;
        let resolved = Problem { env, ..problem };
        if let Some(claim) = self.second_claims.remove(path) {
            self.compare_claim(path, &claim, &resolved, "second")?;
        }
        let node = self.node_mut(path);
        node.evidence.insert("threadedAfter".into(), json!(after.to_string()));
        node.conclusion = Conclusion::Change(resolved);
        Ok(())
    }

    fn compare_claim(&self, path: &NodePath, claim: &Problem, actual: &Problem, which: &str) -> Result<(), CheckDiagnostic> {
        let claimed = Problem {
            change: claim.change.substitute(&self.bindings),
            ..claim.clone()
        };
        let actual = Problem {
            change: actual.change.substitute(&self.bindings),
            ..actual.clone()
        };
        if claimed != actual {
            return fail(
                DiagnosticClass::ThreadingMismatch,
                path,
                format!("{which} premise is {actual}, but the script claims {claimed}"),
            );
        }
        Ok(())
    }

    fn check_args(&self, path: &NodePath, rule: RuleId, args: &RuleArgs) -> Result<(), CheckDiagnostic> {
        let (required, optional) = allowed_args(rule);
        let given = args.given();
        if let Some(extra) = given.iter().find(|g| !required.contains(g) && !optional.contains(g)) {
            return fail(
                DiagnosticClass::BadArgument,
                path,
                format!("{rule} does not take '{extra}'"),
            );
        }
        if let Some(missing) = required.iter().find(|r| !given.contains(r)) {
            return fail(
                DiagnosticClass::BadArgument,
                path,
                format!("{rule} needs '{missing}'"),
            );
        }
        Ok(())
    }

    /// Checks the validator's verdict on a node that needs one. Rejections
    /// leave the node pending rather than invalid.
    fn check_validation(&mut self, path: &NodePath, validator: &str, validations: &[ValidationClause]) {
        if validations.iter().any(|v| v.stakeholder == validator) {
            return;
        }
        let diag = match validations.first() {
            Some(v) => CheckDiagnostic::new(
                DiagnosticClass::WrongValidator,
                path,
                format!("validated by {}, but only {validator} may validate here", v.stakeholder),
            ),
            None => CheckDiagnostic::new(
                DiagnosticClass::MissingValidation,
                path,
                format!("needs 'validated by {validator} granted'"),
            ),
        };
        self.diagnostics.push(diag);
    }

    /// Applies `rule` at the open node `path`, creating its premises.
    pub fn apply(&mut self, path: &NodePath, rule: RuleId, args: &RuleArgs, notes: &Annotations) -> Result<(), CheckDiagnostic> {
        let p = self.open_problem(path)?;
        self.check_args(path, rule, args)?;
        let mut evidence = BTreeMap::new();
        let premises: Vec<Conclusion> = match rule {
            RuleId::Delegation => {
                let d = args.delegate.clone().expect("checked");
                if !self.model.trusts(&p.validator, &d) {
                    return Err(CheckDiagnostic::new(
                        DiagnosticClass::TrustMissing,
                        path,
                        format!("{} does not trust {d}", p.validator),
                    )
                    .with_detail([format!("{} -> {d}", p.validator)]));
                }
                evidence.insert("trust".into(), json!(format!("{} -> {d}", p.validator)));
                vec![Conclusion::Change(Problem {
                    env: args.env.clone().unwrap_or(p.env),
                    change: p.change,
                    validator: d,
                    need: args.need.clone().unwrap_or(p.need),
                })]
            }
            RuleId::KnownSolution => {
                let f = match &args.solution {
                    Some(sol) => {
                        self.instantiate(path, &p.change, sol)?;
                        sol.substitute(&self.bindings)
                    }
                    None => p.change.clone(),
                };
                if let Some(u) = f.unknowns().into_iter().next() {
                    return fail(
                        DiagnosticClass::ShapeMismatch,
                        path,
                        format!("KnownSolution needs a concrete change, ?{u} is unsolved; give 'solution'"),
                    );
                }
                let env = self.try_apply(path, &p.env, &f)?;
                evidence.insert("result".into(), json!(env.to_string()));
                self.check_validation(path, &p.validator, &notes.validations);
                Vec::new()
            }
            RuleId::EnvRefine => vec![Conclusion::Change(Problem {
                env: args.env.clone().expect("checked"),
                ..p
            })],
            RuleId::NeedRefine => vec![Conclusion::Change(Problem {
                need: args.need.clone().expect("checked").normalized(),
                ..p
            })],
            RuleId::SolnRefine => {
                let sol = args.solution.clone().expect("checked");
                self.instantiate(path, &p.change, &sol)?;
                vec![Conclusion::Change(Problem {
                    change: sol.substitute(&self.bindings),
                    ..p
                })]
            }
            RuleId::DomainAdd | RuleId::DomainRemove | RuleId::DomainRefine => {
                let focus = match (rule, &p.change) {
                    (RuleId::DomainAdd, ChangeExpr::Add(d)) => vec![d.name.clone()],
                    (RuleId::DomainRemove, ChangeExpr::Cancel(_)) => Vec::new(),
                    (RuleId::DomainRefine, ChangeExpr::Refine(r)) => vec![r.root().to_string()],
                    _ => {
                        let wanted = match rule {
                            RuleId::DomainAdd => "an addition +C",
                            RuleId::DomainRemove => "a cancellation !D",
                            _ => "a refinement D ~> d[..](..)",
                        };
                        return fail(
                            DiagnosticClass::ShapeMismatch,
                            path,
                            format!("{rule} needs {wanted}, found {}", p.change),
                        );
                    }
                };
                let env = self.try_apply(path, &p.env, &p.change)?;
                vec![Conclusion::Greenfield {
                    env,
                    focus,
                    validator: p.validator,
                    need: p.need,
                }]
            }
            RuleId::Parallel => self.parallel(path, &p, args, &mut evidence)?,
            RuleId::Sequence => self.sequence(path, &p, args)?,
            RuleId::SeqDomainRefineEquiv => {
                let dir = args.direction.expect("checked");
                let rewritten = match dir {
                    Direction::Nest => nest(&p.change),
                    Direction::Unnest => unnest(&p.change),
                };
                let Some(rewritten) = rewritten else {
                    let what = match dir {
                        Direction::Nest => "two adjacent refinements of the same domain",
                        Direction::Unnest => "a nested refinement",
                    };
                    return fail(DiagnosticClass::ShapeMismatch, path, format!("{} has no {what}", p.change));
                };
                if p.change.is_concrete() {
                    let before = apply_change(&p.env, &p.change);
                    let after = apply_change(&p.env, &rewritten);
                    if before.as_ref().ok() != after.as_ref().ok() || before.is_ok() != after.is_ok() {
                        return fail(
                            DiagnosticClass::SideConditionViolated,
                            path,
                            format!("{} and {rewritten} change the environment differently", p.change),
                        );
                    }
                }
                evidence.insert("rewritten".into(), json!(rewritten.to_string()));
                vec![Conclusion::Change(Problem { change: rewritten, ..p })]
            }
            RuleId::SolutionReflect => {
                let ChangeExpr::Unknown(f) = &p.change else {
                    return fail(
                        DiagnosticClass::ShapeMismatch,
                        path,
                        format!("SolutionReflect needs an unsolved placeholder, found {}", p.change),
                    );
                };
                if p.need.is_atom() {
                    return fail(
                        DiagnosticClass::ArityMismatch,
                        path,
                        format!("need {} has no structure to reflect", p.need),
                    );
                }
                let shape = match &args.solution {
                    Some(s) if same_shape(&p.need, s) => s.clone(),
                    Some(s) => {
                        return fail(
                            DiagnosticClass::ArityMismatch,
                            path,
                            format!("{s} does not have the shape of {}", p.need),
                        )
                    }
                    None => self.mirror(f, &p.need),
                };
                self.used.extend(shape.unknowns());
                self.bind(path, f, shape.clone())?;
                vec![Conclusion::Change(Problem { change: shape, ..p })]
            }
        };

        let node = self.node_mut(path);
        node.state = NodeState::Applied(rule);
        node.premises = premises
            .into_iter()
            .enumerate()
            .map(|(i, c)| DerivationNode::open(path.child(i), c))
            .collect();
        node.evidence.extend(evidence);
        record_notes(node, notes);
        Ok(())
    }

    fn try_apply(&self, path: &NodePath, env: &Environment, change: &ChangeExpr) -> Result<Environment, CheckDiagnostic> {
        apply_change(env, change).map_err(|e| {
            CheckDiagnostic::new(DiagnosticClass::ChangeFailed, path, format!("{env} (+) {change}: {e}"))
                .with_detail([e.code().to_string()])
        })
    }

    fn mirror(&mut self, base: &str, need: &Need) -> ChangeExpr {
        match need {
            Need::Atom { .. } => ChangeExpr::Unknown(self.fresh(base)),
            Need::Seq(a, b) => {
                let a = self.mirror(base, a);
                ChangeExpr::seq(a, self.mirror(base, b))
            }
            Need::Par(a, b) => {
                let a = self.mirror(base, a);
                ChangeExpr::par(a, self.mirror(base, b))
            }
        }
    }

    /// Splits a two-part change: the first component and the rest.
    fn split(
        &mut self,
        path: &NodePath,
        change: &ChangeExpr,
        given: Option<&ChangeExpr>,
        par: bool,
    ) -> Result<(ChangeExpr, ChangeExpr), CheckDiagnostic> {
        let join = if par { ChangeExpr::par } else { ChangeExpr::seq };
        let change = match (change, given) {
            (_, Some(sol)) => {
                self.instantiate(path, change, sol)?;
                sol.substitute(&self.bindings)
            }
            (ChangeExpr::Unknown(f), None) => {
                let f = f.clone();
                let shape = join(
                    ChangeExpr::Unknown(self.fresh(&f)),
                    ChangeExpr::Unknown(self.fresh(&f)),
                );
                self.bind(path, &f, shape.clone())?;
                shape
            }
            (c, None) => c.clone(),
        };
        let mut parts: Vec<ChangeExpr> = if par {
            change.par_parts().into_iter().cloned().collect()
        } else {
            change.seq_parts().into_iter().cloned().collect()
        };
        if parts.len() < 2 {
            let op = if par { "parallel" } else { "sequential" };
            return fail(
                DiagnosticClass::ShapeMismatch,
                path,
                format!("{change} is not a {op} composition"),
            );
        }
        let first = parts.remove(0);
        Ok((first, fold_right(parts, join)))
    }

    fn parallel(
        &mut self,
        path: &NodePath,
        p: &Problem,
        args: &RuleArgs,
        evidence: &mut BTreeMap<String, Value>,
    ) -> Result<Vec<Conclusion>, CheckDiagnostic> {
        let mut rest: Vec<Need> = p.need.par_parts().into_iter().cloned().collect();
        if rest.len() < 2 {
            return fail(
                DiagnosticClass::ArityMismatch,
                path,
                format!("need {} is not a parallel composition", p.need),
            );
        }
        let n1 = args.need.clone().expect("checked").normalized();
        for part in n1.par_parts() {
            match rest.iter().position(|r| r == part) {
                Some(i) => {
                    rest.remove(i);
                }
                None => {
                    return fail(
                        DiagnosticClass::BadArgument,
                        path,
                        format!("{part} is not a parallel component of {}", p.need),
                    )
                }
            }
        }
        if rest.is_empty() {
            return fail(DiagnosticClass::ArityMismatch, path, "the second premise would have no need");
        }
        let n2 = fold_right(rest, Need::par).normalized();

        let e1 = args.env.clone().expect("checked");
        for d in &e1.domains {
            if !p.env.domains.contains(d) {
                return fail(
                    DiagnosticClass::BadArgument,
                    path,
                    format!("{} is not a domain of {}", d.name, p.env),
                );
            }
        }
        let taken: BTreeSet<&str> = e1.domains.iter().map(|d| d.name.as_str()).collect();
        let e2 = Environment {
            label: p.env.label.clone(),
            domains: p
                .env
                .domains
                .iter()
                .filter(|d| !taken.contains(d.name.as_str()))
                .cloned()
                .collect(),
        };
        if e2.is_empty() {
            return fail(DiagnosticClass::BadArgument, path, "the second premise would have no environment");
        }
        let shared = shared_phenomena(&e1, &e2);
        evidence.insert("shared".into(), json!(names(&shared)));
        if !shared.is_empty() {
            return Err(CheckDiagnostic::new(
                DiagnosticClass::SideConditionViolated,
                path,
                format!("{e1} and {e2} share phenomena {{{}}}", names(&shared).join(", ")),
            )
            .with_detail(shared));
        }
        let (f1, f2) = self.split(path, &p.change, args.solution.as_ref(), true)?;
        Ok(vec![
            Conclusion::Change(Problem {
                env: e1,
                change: f1,
                validator: p.validator.clone(),
                need: n1,
            }),
            Conclusion::Change(Problem {
                env: e2,
                change: f2,
                validator: p.validator.clone(),
                need: n2,
            }),
        ])
    }

    fn sequence(&mut self, path: &NodePath, p: &Problem, args: &RuleArgs) -> Result<Vec<Conclusion>, CheckDiagnostic> {
        let mut needs: Vec<Need> = p.need.seq_parts().into_iter().cloned().collect();
        if needs.len() < 2 {
            return fail(
                DiagnosticClass::ArityMismatch,
                path,
                format!("need {} is not a sequential composition", p.need),
            );
        }
        let n1 = needs.remove(0);
        let n2 = fold_right(needs, Need::seq);
        let (f1, f2) = self.split(path, &p.change, None, false)?;
        let first = Problem {
            env: p.env.clone(),
            change: f1.clone(),
            validator: p.validator.clone(),
            need: n1,
        };
        if let Some(claim) = &args.first {
            self.compare_claim(path, claim, &first, "first")?;
        }
        if let Some(claim) = &args.second {
            self.used.extend(claim.change.unknowns());
            self.second_claims.insert(path.child(1), claim.clone());
        }
        Ok(vec![
            Conclusion::Change(first),
            Conclusion::Threaded {
                problem: Problem {
                    env: p.env.clone(),
                    change: f2,
                    validator: p.validator.clone(),
                    need: n2,
                },
                after: f1,
            },
        ])
    }

    /// Closes a greenfield premise.
    pub fn discharge(&mut self, path: &NodePath, notes: &Annotations) -> Result<(), CheckDiagnostic> {
        let Some(node) = self.node(path) else {
            return fail(DiagnosticClass::UnknownNode, path, format!("no node {path}"));
        };
        if node.state != NodeState::Open {
            return fail(DiagnosticClass::NotOpen, path, format!("{path} has already been worked"));
        }
        if !node.conclusion.is_greenfield() {
            return fail(
                DiagnosticClass::ShapeMismatch,
                path,
                "only greenfield premises can be discharged",
            );
        }
        let validator = node.conclusion.validator().to_string();
        self.check_validation(path, &validator, &notes.validations);
        let node = self.node_mut(path);
        node.state = NodeState::Discharged;
        record_notes(node, notes);
        Ok(())
    }

    fn skipped(&self, path: &NodePath) -> bool {
        self.failed.iter().any(|f| path.starts_with(f))
    }

    /// Replays statements, recording diagnostics instead of stopping.
    pub fn run(&mut self, statements: &[Statement]) {
        let mut consumed = vec![false; statements.len()];
        for i in 0..statements.len() {
            if consumed[i] {
                continue;
            }
            let stmt = &statements[i];
            if self.skipped(stmt.path()) {
                continue;
            }
            let result = match stmt {
                Statement::Apply {
                    rule, path, args, notes, ..
                } => self.apply(path, *rule, args, notes),
                Statement::Discharge { path, notes, .. } => self.discharge(path, notes),
                Statement::Alternative { path, .. } => {
                    let group: Vec<usize> = (i..statements.len())
                        .filter(|&j| {
                            !consumed[j]
                                && matches!(&statements[j], Statement::Alternative { path: q, .. } if q == path)
                        })
                        .collect();
                    for &j in &group {
                        consumed[j] = true;
                    }
                    let alts: Vec<&Statement> = group.iter().map(|&j| &statements[j]).collect();
                    self.alternatives(path, stmt.pos(), &alts)
                }
            };
            if let Err(mut d) = result {
                d.pos.get_or_insert(stmt.pos());
                self.failed.insert(stmt.path().clone());
                self.diagnostics.push(d);
            }
        }
    }

    fn alternatives(&mut self, path: &NodePath, pos: Pos, alts: &[&Statement]) -> Result<(), CheckDiagnostic> {
        match self.node(path) {
            None => return fail(DiagnosticClass::UnknownNode, path, format!("no node {path}")),
            Some(n) if n.state != NodeState::Open => {
                return fail(DiagnosticClass::NotOpen, path, format!("{path} has already been worked"))
            }
            _ => {}
        }
        let mut records = Vec::new();
        let mut chosen_state: Option<Session<'m>> = None;
        let mut chosen_count = 0;
        for alt in alts {
            let Statement::Alternative { name, chosen, body, .. } = alt else {
                continue;
            };
            let mut trial = self.clone();
            let before = trial.diagnostics.len();
            for stmt in body.iter().filter(|s| !s.path().starts_with(path)) {
                let mut d = CheckDiagnostic::new(
                    DiagnosticClass::UnknownNode,
                    stmt.path(),
                    format!("alternative {name} may only work below {path}"),
                );
                d.pos = Some(stmt.pos());
                trial.diagnostics.push(d);
            }
            let inside: Vec<Statement> = body.iter().filter(|s| s.path().starts_with(path)).cloned().collect();
            trial.run(&inside);
            let new_diags: Vec<CheckDiagnostic> = trial.diagnostics[before..]
                .iter()
                .cloned()
                .map(|mut d| {
                    d.message = format!("in alternative {name}: {}", d.message);
                    d
                })
                .collect();
            let open = trial
                .node(path)
                .map(|n| {
                    n.walk()
                        .iter()
                        .any(|m| m.state == NodeState::Open || (m.needs_validation() && !m.granted()))
                })
                .unwrap_or(true);
            let outcome = if !new_diags.is_empty() {
                "invalid"
            } else if open {
                "incomplete"
            } else {
                "solved"
            };
            records.push(AlternativeRecord {
                name: name.clone(),
                chosen: *chosen,
                outcome: outcome.into(),
            });
            if *chosen {
                chosen_count += 1;
                if chosen_state.is_none() {
                    trial.diagnostics.truncate(before);
                    chosen_state = Some(trial);
                }
            }
            self.diagnostics.extend(new_diags);
        }
        let extra = std::mem::take(&mut self.diagnostics);
        if let Some(state) = chosen_state {
            *self = state;
        }
        self.diagnostics = extra;
        if let Some(n) = self.root.get_mut(path) {
            n.alternatives = records;
        }
        if chosen_count != 1 {
            let mut d = CheckDiagnostic::new(
                DiagnosticClass::AlternativeChoice,
                path,
                format!("exactly one alternative must be marked chosen, found {chosen_count}"),
            );
            d.pos = Some(pos);
            self.diagnostics.push(d);
        }
        Ok(())
    }

    /// Final whole-tree checks: pending threading, J profiles, plans.
    pub fn finish(mut self, name: impl Into<String>) -> Derivation {
        let threaded: Vec<NodePath> = self
            .root
            .walk()
            .into_iter()
            .filter(|n| matches!(n.conclusion, Conclusion::Threaded { .. }))
            .map(|n| n.path.clone())
            .collect();
        for path in threaded {
            let premise_one_open = {
                let mut first = path.clone();
                first.0.pop();
                self.node(&first.child(0))
                    .is_none_or(|n| n.walk().iter().any(|m| m.state == NodeState::Open))
            };
            if premise_one_open {
                continue;
            }
            if let Err(d) = self.resolve_threaded(&path) {
                self.diagnostics.push(d);
            }
        }
        let mut d = Derivation {
            name: name.into(),
            root: self.root,
            bindings: self.bindings,
            diagnostics: self.diagnostics,
        };
        let extra = artefact_checks(&d);
        d.diagnostics.extend(extra);
        d
    }
}

fn record_notes(node: &mut DerivationNode, notes: &Annotations) {
    node.justification = notes.justification.clone();
    node.plan = notes.plan.clone();
    node.validations = notes.validations.clone();
    node.claimed_evidence = notes.evidence.clone();
}

fn match_pattern(pattern: &ChangeExpr, target: &ChangeExpr, local: &mut BTreeMap<String, ChangeExpr>) -> bool {
    match (pattern, target) {
        (ChangeExpr::Unknown(n), t) => match local.get(n) {
            Some(bound) => bound == t,
            None => {
                local.insert(n.clone(), t.clone());
                true
            }
        },
        (ChangeExpr::Seq(a, b), ChangeExpr::Seq(c, d)) | (ChangeExpr::Par(a, b), ChangeExpr::Par(c, d)) => {
            match_pattern(a, c, local) && match_pattern(b, d, local)
        }
        (p, t) => p == t,
    }
}

/// `D ~> d[A](B) ; D ~> d[C](E)` becomes `(D ~> d[A](B)) ~> d[C](E)` for
/// the first such adjacent pair in a sequence.
pub fn nest(change: &ChangeExpr) -> Option<ChangeExpr> {
    let mut parts: Vec<ChangeExpr> = change.seq_parts().into_iter().cloned().collect();
    for i in 0..parts.len().saturating_sub(1) {
        if let (ChangeExpr::Refine(r1), ChangeExpr::Refine(r2)) = (&parts[i], &parts[i + 1]) {
            if r2.target == RefineTarget::Domain(r1.root().to_string()) {
                let nested = ChangeExpr::Refine(Refinement {
                    target: RefineTarget::Refined(Box::new(r1.clone())),
                    retained: r2.retained.clone(),
                    added: r2.added.clone(),
                });
                parts.splice(i..=i + 1, [nested]);
                return Some(fold_right(parts, ChangeExpr::seq));
            }
        }
    }
    None
}

/// Inverse of [`nest`] on the first nested refinement in a sequence.
pub fn unnest(change: &ChangeExpr) -> Option<ChangeExpr> {
    let mut parts: Vec<ChangeExpr> = change.seq_parts().into_iter().cloned().collect();
    for i in 0..parts.len() {
        if let ChangeExpr::Refine(r) = &parts[i] {
            if let RefineTarget::Refined(inner) = &r.target {
                let outer = ChangeExpr::Refine(Refinement {
                    target: RefineTarget::Domain(inner.root().to_string()),
                    retained: r.retained.clone(),
                    added: r.added.clone(),
                });
                let inner = ChangeExpr::Refine((**inner).clone());
                parts.splice(i..=i, [inner, outer]);
                return Some(fold_right(parts, ChangeExpr::seq));
            }
        }
    }
    None
}

/// J profiles, plan steps and plan constraints over the replayed tree.
fn artefact_checks(d: &Derivation) -> Vec<CheckDiagnostic> {
    let mut out = Vec::new();
    let nodes = d.root.walk();
    for n in &nodes {
        if let Some(rule) = n.rule() {
            let mut missing: Vec<JField> = required_fields(rule)
                .into_iter()
                .filter(|f| !n.justification.has(*f))
                .collect();
            if n.plan.steps.len() >= 2 && !n.justification.has(JField::Risk) {
                missing.push(JField::Risk);
            }
            if !missing.is_empty() {
                let fields: Vec<&str> = missing.iter().map(|f| f.field_name()).collect();
                out.push(
                    CheckDiagnostic::new(
                        DiagnosticClass::MissingJustification,
                        &n.path,
                        format!("{rule} needs {}", fields.join(", ")),
                    )
                    .with_detail(fields.iter().map(|s| s.to_string())),
                );
            }
        }
    }

    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for n in &nodes {
        for s in &n.plan.steps {
            if !ids.insert(&s.id) {
                out.push(
                    CheckDiagnostic::new(DiagnosticClass::DuplicateStep, &n.path, format!("step {} is declared twice", s.id))
                        .with_detail([s.id.clone()]),
                );
            }
            let committed = d.committed_change(&n.path);
            let installed = committed.as_ref().is_some_and(|c| c.atoms().contains(&&s.installs));
            if !installed {
                let shown = committed.map(|c| c.to_string()).unwrap_or_default();
                out.push(
                    CheckDiagnostic::new(
                        DiagnosticClass::PlanMismatch,
                        &n.path,
                        format!("step {} installs {}, which is not part of {shown}", s.id, s.installs),
                    )
                    .with_detail([s.id.clone()]),
                );
            }
        }
    }
    for n in &nodes {
        for c in n.plan.all_constraints() {
            for id in [&c.step, &c.other] {
                if !ids.contains(id.as_str()) {
                    out.push(
                        CheckDiagnostic::new(DiagnosticClass::PlanMismatch, &n.path, format!("constraint mentions unknown step {id}"))
                            .with_detail([id.clone()]),
                    );
                }
            }
        }
    }

    for n in &nodes {
        let kind = match n.rule() {
            Some(RuleId::Sequence) => ConstraintKind::After,
            Some(RuleId::Parallel) => ConstraintKind::ParallelOk,
            _ => continue,
        };
        if n.premises.len() != 2 {
            continue;
        }
        let s1: BTreeSet<&str> = n.premises[0].steps().iter().map(|s| s.id.as_str()).collect();
        let s2: BTreeSet<&str> = n.premises[1].steps().iter().map(|s| s.id.as_str()).collect();
        if s1.is_empty() || s2.is_empty() {
            continue;
        }
        let constraints: Vec<Constraint> = n.walk().iter().flat_map(|m| m.plan.all_constraints()).collect();
        let found = constraints.iter().any(|c| {
            c.kind == kind
                && match kind {
                    ConstraintKind::After => s2.contains(c.step.as_str()) && s1.contains(c.other.as_str()),
                    ConstraintKind::ParallelOk => {
                        (s1.contains(c.step.as_str()) && s2.contains(c.other.as_str()))
                            || (s2.contains(c.step.as_str()) && s1.contains(c.other.as_str()))
                    }
                }
        });
        if !found {
            let what = match kind {
                ConstraintKind::After => "an 'after' constraint ordering the second premise's steps after the first's",
                ConstraintKind::ParallelOk => "a 'parallel-ok' constraint between the two branches' steps",
            };
            out.push(CheckDiagnostic::new(
                DiagnosticClass::MissingPlanConstraint,
                &n.path,
                format!("{} plan needs {what}", n.rule().expect("applied")),
            ));
        }
    }

    let after: Vec<(String, String)> = nodes
        .iter()
        .flat_map(|n| n.plan.all_constraints())
        .filter(|c| c.kind == ConstraintKind::After)
        .map(|c| (c.step, c.other))
        .collect();
    if let Some(cycle) = super::plan::find_cycle(&after) {
        out.push(
            CheckDiagnostic::new(
                DiagnosticClass::CycleDetected,
                &NodePath::root(),
                format!("'after' constraints form a cycle through {}", cycle.join(", ")),
            )
            .with_detail(cycle),
        );
    }
    out
}

/// Replays `script` against `model`.
pub fn check(script: &DerivationScript, model: &Model) -> Derivation {
    let mut s = Session::new(model, script.goal.clone());
    s.run(&script.statements);
    s.finish(script.name.clone())
}

/// The solution a solved derivation commits to.
pub fn solution_of(d: &Derivation) -> Result<ChangeExpr, super::plan::PlanError> {
    if !d.verdict().is_solved() {
        return Err(super::plan::PlanError::UnsolvedTree(d.verdict().label().to_string()));
    }
    let f = d.committed_change(&NodePath::root()).expect("root exists");
    match f.unknowns().into_iter().next() {
        Some(u) => Err(super::plan::PlanError::UnsolvedTree(format!("?{u} is never fixed"))),
        None => Ok(f),
    }
}
