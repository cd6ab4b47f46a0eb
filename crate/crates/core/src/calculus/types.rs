use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsl::Pos;
use crate::model::{ChangeExpr, Environment, Need, Problem};

/// The closed set of transformation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    Delegation,
    KnownSolution,
    EnvRefine,
    NeedRefine,
    SolnRefine,
    DomainAdd,
    DomainRemove,
    DomainRefine,
    Parallel,
    Sequence,
    SeqDomainRefineEquiv,
    SolutionReflect,
}

impl RuleId {
    pub const ALL: [RuleId; 12] = [
        RuleId::Delegation,
        RuleId::KnownSolution,
        RuleId::EnvRefine,
        RuleId::NeedRefine,
        RuleId::SolnRefine,
        RuleId::DomainAdd,
        RuleId::DomainRemove,
        RuleId::DomainRefine,
        RuleId::Parallel,
        RuleId::Sequence,
        RuleId::SeqDomainRefineEquiv,
        RuleId::SolutionReflect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::Delegation => "Delegation",
            RuleId::KnownSolution => "KnownSolution",
            RuleId::EnvRefine => "EnvRefine",
            RuleId::NeedRefine => "NeedRefine",
            RuleId::SolnRefine => "SolnRefine",
            RuleId::DomainAdd => "DomainAdd",
            RuleId::DomainRemove => "DomainRemove",
            RuleId::DomainRefine => "DomainRefine",
            RuleId::Parallel => "Parallel",
            RuleId::Sequence => "Sequence",
            RuleId::SeqDomainRefineEquiv => "SeqDomainRefineEquiv",
            RuleId::SolutionReflect => "SolutionReflect",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            RuleId::KnownSolution => 0,
            RuleId::Parallel | RuleId::Sequence => 2,
            _ => 1,
        }
    }

    /// Rules whose premise is a greenfield problem closed by discharge.
    pub fn is_bridging(self) -> bool {
        matches!(self, RuleId::DomainAdd | RuleId::DomainRemove | RuleId::DomainRefine)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleId::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown rule '{s}'"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Risk {
    pub risk: String,
    pub mitigation: String,
}

/// The J artefact carried by a rule application.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Justification {
    pub rule_rationale: Option<String>,
    pub coordination_rationale: Option<String>,
    pub integration_argument: Option<String>,
    pub dependency_argument: Option<String>,
    pub risk_register: Vec<Risk>,
    pub feedback_cadence: Option<String>,
    pub timeline_rationale: Option<String>,
    pub validation_criteria: Option<String>,
    pub resource_rationale: Option<String>,
}

/// Justification fields, named as they appear in `justify` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JField {
    Rule,
    Coordination,
    Integration,
    Dependency,
    Risk,
    Feedback,
    Timeline,
    Criteria,
    Resources,
}

impl JField {
    pub const ALL: [JField; 9] = [
        JField::Rule,
        JField::Coordination,
        JField::Integration,
        JField::Dependency,
        JField::Risk,
        JField::Feedback,
        JField::Timeline,
        JField::Criteria,
        JField::Resources,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            JField::Rule => "rule",
            JField::Coordination => "coordination",
            JField::Integration => "integration",
            JField::Dependency => "dependency",
            JField::Risk => "risk",
            JField::Feedback => "feedback",
            JField::Timeline => "timeline",
            JField::Criteria => "criteria",
            JField::Resources => "resources",
        }
    }

    /// Field name in the structured export.
    pub fn field_name(self) -> &'static str {
        match self {
            JField::Rule => "ruleRationale",
            JField::Coordination => "coordinationRationale",
            JField::Integration => "integrationArgument",
            JField::Dependency => "dependencyArgument",
            JField::Risk => "riskRegister",
            JField::Feedback => "feedbackCadence",
            JField::Timeline => "timelineRationale",
            JField::Criteria => "validationCriteria",
            JField::Resources => "resourceRationale",
        }
    }
}

impl Justification {
    pub fn has(&self, field: JField) -> bool {
        let present = |v: &Option<String>| v.as_deref().is_some_and(|s| !s.trim().is_empty());
        match field {
            JField::Rule => present(&self.rule_rationale),
            JField::Coordination => present(&self.coordination_rationale),
            JField::Integration => present(&self.integration_argument),
            JField::Dependency => present(&self.dependency_argument),
            JField::Risk => !self.risk_register.is_empty(),
            JField::Feedback => present(&self.feedback_cadence),
            JField::Timeline => present(&self.timeline_rationale),
            JField::Criteria => present(&self.validation_criteria),
            JField::Resources => present(&self.resource_rationale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Deadline {
    /// ISO-8601 calendar date, kept as written.
    Absolute(String),
    /// A release identifier such as `10.3.2`.
    Release(String),
}

impl fmt::Display for Deadline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deadline::Absolute(d) => f.write_str(d),
            Deadline::Release(r) => write!(f, "release {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: String,
    pub action: String,
    pub installs: ChangeExpr,
    pub after: Vec<String>,
    pub parallel_ok: Vec<String>,
    pub deadline: Option<Deadline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ConstraintKind {
    After,
    ParallelOk,
}

/// `step` is constrained relative to `other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub step: String,
    pub kind: ConstraintKind,
    pub other: String,
}

/// The I artefact carried by a rule application.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFragment {
    pub steps: Vec<PlanStep>,
    pub constraints: Vec<Constraint>,
}

impl PlanFragment {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.constraints.is_empty()
    }

    /// Step-level and free-standing constraints together.
    pub fn all_constraints(&self) -> Vec<Constraint> {
        let mut out = Vec::new();
        for s in &self.steps {
            for a in &s.after {
                out.push(Constraint {
                    step: s.id.clone(),
                    kind: ConstraintKind::After,
                    other: a.clone(),
                });
            }
            for p in &s.parallel_ok {
                out.push(Constraint {
                    step: s.id.clone(),
                    kind: ConstraintKind::ParallelOk,
                    other: p.clone(),
                });
            }
        }
        out.extend(self.constraints.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationClause {
    pub stakeholder: String,
    pub granted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Nest,
    Unnest,
}

/// Rule arguments as written after `with`. Which keys a rule accepts is
/// checked when the rule is applied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleArgs {
    pub delegate: Option<String>,
    pub env: Option<Environment>,
    pub need: Option<Need>,
    pub solution: Option<ChangeExpr>,
    pub first: Option<Problem>,
    pub second: Option<Problem>,
    pub direction: Option<Direction>,
}

impl RuleArgs {
    pub fn given(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.delegate.is_some() {
            out.push("delegate");
        }
        if self.env.is_some() {
            out.push("env");
        }
        if self.need.is_some() {
            out.push("need");
        }
        if self.solution.is_some() {
            out.push("solution");
        }
        if self.first.is_some() {
            out.push("first");
        }
        if self.second.is_some() {
            out.push("second");
        }
        if self.direction.is_some() {
            out.push("direction");
        }
        out
    }
}

/// Clauses attached to an `apply` or `discharge` statement.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub justification: Justification,
    pub plan: PlanFragment,
    pub validations: Vec<ValidationClause>,
    /// `evidence { key: "value" }` entries. Recorded, never trusted.
    pub evidence: Vec<(String, String)>,
}

/// Position of a node in a derivation tree: premise indices from the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        NodePath(v)
    }

    pub fn starts_with(&self, prefix: &NodePath) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for i in &self.0 {
            write!(f, ".{i}")?;
        }
        Ok(())
    }
}

impl FromStr for NodePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('.');
        if parts.next() != Some("root") {
            return Err(format!("node path '{s}' must start with 'root'"));
        }
        parts
            .map(|p| p.parse::<usize>().map_err(|_| format!("bad node path segment '{p}' in '{s}'")))
            .collect::<Result<Vec<_>, _>>()
            .map(NodePath)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Statement {
    Apply {
        rule: RuleId,
        path: NodePath,
        args: RuleArgs,
        notes: Annotations,
        pos: Pos,
    },
    Discharge {
        path: NodePath,
        notes: Annotations,
        pos: Pos,
    },
    Alternative {
        name: String,
        path: NodePath,
        chosen: bool,
        body: Vec<Statement>,
        pos: Pos,
    },
}

impl Statement {
    pub fn path(&self) -> &NodePath {
        match self {
            Statement::Apply { path, .. }
            | Statement::Discharge { path, .. }
            | Statement::Alternative { path, .. } => path,
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            Statement::Apply { pos, .. }
            | Statement::Discharge { pos, .. }
            | Statement::Alternative { pos, .. } => *pos,
        }
    }
}

/// A parsed `derivation` block with its goal problem resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationScript {
    pub name: String,
    pub goal_name: String,
    pub goal: Problem,
    pub statements: Vec<Statement>,
}
