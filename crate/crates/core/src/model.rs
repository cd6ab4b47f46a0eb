//! The organisation model: phenomena, domains, environments, needs, change
//! expressions, stakeholders and the organisation pair.
//!
//! Environments are trees. A refined domain becomes a composite whose
//! architecture lists the retained and added sub-domains; every other
//! domain is a leaf carrying its observed and controlled phenomena.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhenomenonKind {
    Entity,
    Event,
    Value,
    Role,
    State,
    Truth,
}

impl PhenomenonKind {
    pub const ALL: [PhenomenonKind; 6] = [
        PhenomenonKind::Entity,
        PhenomenonKind::Event,
        PhenomenonKind::Value,
        PhenomenonKind::Role,
        PhenomenonKind::State,
        PhenomenonKind::Truth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhenomenonKind::Entity => "entity",
            PhenomenonKind::Event => "event",
            PhenomenonKind::Value => "value",
            PhenomenonKind::Role => "role",
            PhenomenonKind::State => "state",
            PhenomenonKind::Truth => "truth",
        }
    }
}

impl FromStr for PhenomenonKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhenomenonKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown phenomenon kind '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phenomenon {
    pub name: String,
    pub kind: PhenomenonKind,
}

/// A causal edge `cause -> effect` asserted by the description of `owner`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CausalLink {
    pub cause: String,
    pub effect: String,
    pub owner: String,
}

/// Sub-domains introduced by a refinement: `[retained](added)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub retained: Vec<Domain>,
    pub added: Vec<Domain>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub description: String,
    pub observed: BTreeSet<String>,
    pub controlled: BTreeSet<String>,
    pub links: BTreeSet<CausalLink>,
    pub structure: Option<Architecture>,
}

impl Domain {
    pub fn new(name: impl Into<String>) -> Self {
        Domain {
            name: name.into(),
            description: String::new(),
            observed: BTreeSet::new(),
            controlled: BTreeSet::new(),
            links: BTreeSet::new(),
            structure: None,
        }
    }

    pub fn described(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn observing<I, S>(mut self, phenomena: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.observed.extend(phenomena.into_iter().map(Into::into));
        self
    }

    pub fn controlling<I, S>(mut self, phenomena: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.controlled.extend(phenomena.into_iter().map(Into::into));
        self
    }

    pub fn with_link(mut self, cause: impl Into<String>, effect: impl Into<String>) -> Self {
        let owner = self.name.clone();
        self.links.insert(CausalLink {
            cause: cause.into(),
            effect: effect.into(),
            owner,
        });
        self
    }

    /// Builds the composite that replaces `target` under a refinement.
    pub fn composite(target: &Domain, retained: Vec<Domain>, added: Vec<Domain>) -> Self {
        Domain {
            name: target.name.clone(),
            description: target.description.clone(),
            observed: BTreeSet::new(),
            controlled: BTreeSet::new(),
            links: BTreeSet::new(),
            structure: Some(Architecture { retained, added }),
        }
    }

    pub fn is_composite(&self) -> bool {
        self.structure.is_some()
    }

    pub fn children(&self) -> impl Iterator<Item = &Domain> {
        self.structure
            .iter()
            .flat_map(|a| a.retained.iter().chain(a.added.iter()))
    }

    /// This domain followed by all nested sub-domains, depth first.
    pub fn subtree(&self) -> Vec<&Domain> {
        let mut out = vec![self];
        for child in self.children() {
            out.extend(child.subtree());
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.subtree().into_iter().map(|d| d.name.clone()).collect()
    }

    pub fn find(&self, name: &str) -> Option<&Domain> {
        self.subtree().into_iter().find(|d| d.name == name)
    }

    /// Phenomena controlled anywhere in this subtree.
    pub fn controlled_all(&self) -> BTreeSet<String> {
        self.subtree()
            .into_iter()
            .flat_map(|d| d.controlled.iter().cloned())
            .collect()
    }

    pub fn observed_all(&self) -> BTreeSet<String> {
        self.subtree()
            .into_iter()
            .flat_map(|d| d.observed.iter().cloned())
            .collect()
    }

    pub fn phenomena(&self) -> BTreeSet<String> {
        let mut all = self.observed_all();
        all.extend(self.controlled_all());
        all
    }

    /// Local well-formedness: disjoint observed/controlled sets and links
    /// whose endpoints this domain can see.
    pub fn check_local(&self) -> Result<(), ModelError> {
        for d in self.subtree() {
            let both: BTreeSet<String> = d.observed.intersection(&d.controlled).cloned().collect();
            if !both.is_empty() {
                return Err(ModelError::ObservedAndControlled {
                    domain: d.name.clone(),
                    phenomena: both,
                });
            }
            for link in &d.links {
                if link.cause == link.effect {
                    return Err(ModelError::SelfLink {
                        domain: d.name.clone(),
                        phenomenon: link.cause.clone(),
                    });
                }
                if link.owner != d.name {
                    return Err(ModelError::ForeignLink {
                        domain: d.name.clone(),
                        owner: link.owner.clone(),
                    });
                }
                for end in [&link.cause, &link.effect] {
                    if !d.observed.contains(end) && !d.controlled.contains(end) {
                        return Err(ModelError::LinkEndpoint {
                            domain: d.name.clone(),
                            phenomenon: end.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// An organisational environment: an ordered collection of domains. The
/// optional label names the whole environment (`DevEnv` in `DevEnv.OldAPI`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Environment {
    pub label: Option<String>,
    pub domains: Vec<Domain>,
}

impl Environment {
    pub fn new(domains: Vec<Domain>) -> Self {
        Environment {
            label: None,
            domains,
        }
    }

    pub fn labelled(label: impl Into<String>, domains: Vec<Domain>) -> Self {
        Environment {
            label: Some(label.into()),
            domains,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// Every domain, nested ones included, depth first in declaration order.
    pub fn all_domains(&self) -> Vec<&Domain> {
        self.domains.iter().flat_map(|d| d.subtree()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.all_domains().into_iter().map(|d| d.name.clone()).collect()
    }

    pub fn top_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.all_domains().into_iter().find(|d| d.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.domain(name).is_some()
    }

    /// Domains that carry phenomena directly (composites carry none).
    pub fn leaves(&self) -> Vec<&Domain> {
        self.all_domains()
            .into_iter()
            .filter(|d| !d.is_composite())
            .collect()
    }

    pub fn controlled(&self) -> BTreeSet<String> {
        self.domains.iter().flat_map(|d| d.controlled_all()).collect()
    }

    pub fn observed(&self) -> BTreeSet<String> {
        self.domains.iter().flat_map(|d| d.observed_all()).collect()
    }

    pub fn controller_of(&self, phenomenon: &str) -> Option<&Domain> {
        self.all_domains()
            .into_iter()
            .find(|d| d.controlled.contains(phenomenon))
    }

    pub fn check_well_formed(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for d in self.all_domains() {
            if !seen.insert(d.name.as_str()) {
                return Err(ModelError::DuplicateDomain(d.name.clone()));
            }
        }
        let mut controllers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for d in self.all_domains() {
            for p in &d.controlled {
                controllers.entry(p).or_default().push(&d.name);
            }
        }
        for (p, owners) in controllers {
            if owners.len() > 1 {
                return Err(ModelError::MultipleControllers {
                    phenomenon: p.to_string(),
                    domains: owners.into_iter().map(String::from).collect(),
                });
            }
        }
        for d in &self.domains {
            d.check_local()?;
        }
        Ok(())
    }

    pub fn is_well_formed(&self) -> bool {
        self.check_well_formed().is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("duplicate domain '{0}'")]
    DuplicateDomain(String),
    #[error("domain '{domain}' both observes and controls {phenomena:?}")]
    ObservedAndControlled {
        domain: String,
        phenomena: BTreeSet<String>,
    },
    #[error("phenomenon '{phenomenon}' is controlled by more than one domain: {domains:?}")]
    MultipleControllers {
        phenomenon: String,
        domains: Vec<String>,
    },
    #[error("causal link in '{domain}' relates '{phenomenon}' to itself")]
    SelfLink { domain: String, phenomenon: String },
    #[error("domain '{domain}' carries a link owned by '{owner}'")]
    ForeignLink { domain: String, owner: String },
    #[error("causal link in '{domain}' mentions '{phenomenon}', which the domain neither observes nor controls")]
    LinkEndpoint { domain: String, phenomenon: String },
}

/// Union over all domains of their observed and controlled phenomena.
pub fn phenomena_universe(env: &Environment) -> BTreeSet<String> {
    env.domains.iter().flat_map(|d| d.phenomena()).collect()
}

pub fn shared_phenomena(e1: &Environment, e2: &Environment) -> BTreeSet<String> {
    let u2 = phenomena_universe(e2);
    phenomena_universe(e1)
        .into_iter()
        .filter(|p| u2.contains(p))
        .collect()
}

/// A recognised need. `Par` is commutative and associative, `Seq` only
/// associative; see [`Need::normalized`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Need {
    Atom { name: String, description: String },
    Seq(Box<Need>, Box<Need>),
    Par(Box<Need>, Box<Need>),
}

impl Need {
    pub fn atom(name: impl Into<String>, description: impl Into<String>) -> Self {
        Need::Atom {
            name: name.into(),
            description: description.into(),
        }
    }

    pub fn seq(a: Need, b: Need) -> Self {
        Need::Seq(Box::new(a), Box::new(b))
    }

    pub fn par(a: Need, b: Need) -> Self {
        Need::Par(Box::new(a), Box::new(b))
    }

    /// Canonical form: sequences flattened and right-nested, parallel
    /// components flattened, sorted and right-nested. Duplicates are kept.
    pub fn normalized(&self) -> Need {
        match self {
            Need::Atom { .. } => self.clone(),
            Need::Seq(..) => {
                let parts: Vec<Need> = self.seq_parts().into_iter().map(|n| n.normalized()).collect();
                let mut flat = Vec::new();
                for p in parts {
                    match p {
                        Need::Seq(..) => flat.extend(p.seq_parts().into_iter().cloned()),
                        other => flat.push(other),
                    }
                }
                fold_right(flat, Need::seq)
            }
            Need::Par(..) => {
                let parts: Vec<Need> = self.par_parts().into_iter().map(|n| n.normalized()).collect();
                let mut flat = Vec::new();
                for p in parts {
                    match p {
                        Need::Par(..) => flat.extend(p.par_parts().into_iter().cloned()),
                        other => flat.push(other),
                    }
                }
                flat.sort();
                fold_right(flat, Need::par)
            }
        }
    }

    /// Components of a (possibly nested) sequence, in order.
    pub fn seq_parts(&self) -> Vec<&Need> {
        match self {
            Need::Seq(a, b) => {
                let mut v = a.seq_parts();
                v.extend(b.seq_parts());
                v
            }
            other => vec![other],
        }
    }

    pub fn par_parts(&self) -> Vec<&Need> {
        match self {
            Need::Par(a, b) => {
                let mut v = a.par_parts();
                v.extend(b.par_parts());
                v
            }
            other => vec![other],
        }
    }

    pub fn atoms(&self) -> Vec<&str> {
        match self {
            Need::Atom { name, .. } => vec![name.as_str()],
            Need::Seq(a, b) | Need::Par(a, b) => {
                let mut v = a.atoms();
                v.extend(b.atoms());
                v
            }
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Need::Atom { .. })
    }
}

/// Rebuilds a right-nested binary tree from a non-empty list.
pub(crate) fn fold_right<T>(mut items: Vec<T>, join: impl Fn(T, T) -> T) -> T {
    let mut acc = items.pop().expect("fold_right on an empty list");
    while let Some(next) = items.pop() {
        acc = join(next, acc);
    }
    acc
}

/// Target of a refinement: a named domain, or the composite produced by an
/// inner refinement (`(D ~> d[A](B)) ~> d[C](E)`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefineTarget {
    Domain(String),
    Refined(Box<Refinement>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Refinement {
    pub target: RefineTarget,
    pub retained: Vec<Domain>,
    pub added: Vec<Domain>,
}

impl Refinement {
    pub fn new(target: impl Into<String>, retained: Vec<Domain>, added: Vec<Domain>) -> Self {
        Refinement {
            target: RefineTarget::Domain(target.into()),
            retained,
            added,
        }
    }

    /// The name of the domain ultimately being refined.
    pub fn root(&self) -> &str {
        match &self.target {
            RefineTarget::Domain(name) => name,
            RefineTarget::Refined(inner) => inner.root(),
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = &Domain> {
        self.retained.iter().chain(self.added.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeExpr {
    /// The empty change.
    Skip,
    /// A solution not yet found (`?F`).
    Unknown(String),
    Add(Domain),
    Cancel(String),
    Refine(Refinement),
    Seq(Box<ChangeExpr>, Box<ChangeExpr>),
    Par(Box<ChangeExpr>, Box<ChangeExpr>),
}

impl ChangeExpr {
    pub fn unknown(name: impl Into<String>) -> Self {
        ChangeExpr::Unknown(name.into())
    }

    pub fn cancel(name: impl Into<String>) -> Self {
        ChangeExpr::Cancel(name.into())
    }

    pub fn refine(target: impl Into<String>, retained: Vec<Domain>, added: Vec<Domain>) -> Self {
        ChangeExpr::Refine(Refinement::new(target, retained, added))
    }

    pub fn seq(a: ChangeExpr, b: ChangeExpr) -> Self {
        ChangeExpr::Seq(Box::new(a), Box::new(b))
    }

    pub fn par(a: ChangeExpr, b: ChangeExpr) -> Self {
        ChangeExpr::Par(Box::new(a), Box::new(b))
    }

    pub fn is_atom(&self) -> bool {
        matches!(
            self,
            ChangeExpr::Add(_) | ChangeExpr::Cancel(_) | ChangeExpr::Refine(_)
        )
    }

    pub fn unknowns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_unknowns(&mut out);
        out
    }

    fn collect_unknowns(&self, out: &mut BTreeSet<String>) {
        match self {
            ChangeExpr::Unknown(n) => {
                out.insert(n.clone());
            }
            ChangeExpr::Seq(a, b) | ChangeExpr::Par(a, b) => {
                a.collect_unknowns(out);
                b.collect_unknowns(out);
            }
            _ => {}
        }
    }

    pub fn is_concrete(&self) -> bool {
        self.unknowns().is_empty()
    }

    pub fn seq_parts(&self) -> Vec<&ChangeExpr> {
        match self {
            ChangeExpr::Seq(a, b) => {
                let mut v = a.seq_parts();
                v.extend(b.seq_parts());
                v
            }
            other => vec![other],
        }
    }

    pub fn par_parts(&self) -> Vec<&ChangeExpr> {
        match self {
            ChangeExpr::Par(a, b) => {
                let mut v = a.par_parts();
                v.extend(b.par_parts());
                v
            }
            other => vec![other],
        }
    }

    /// Add/Cancel/Refine atoms in left-to-right order.
    pub fn atoms(&self) -> Vec<&ChangeExpr> {
        match self {
            ChangeExpr::Seq(a, b) | ChangeExpr::Par(a, b) => {
                let mut v = a.atoms();
                v.extend(b.atoms());
                v
            }
            atom if atom.is_atom() => vec![atom],
            _ => Vec::new(),
        }
    }

    /// Domain names this change mentions, introduced or targeted.
    pub fn domain_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for atom in self.atoms() {
            match atom {
                ChangeExpr::Add(d) => out.extend(d.names()),
                ChangeExpr::Cancel(n) => {
                    out.insert(n.clone());
                }
                ChangeExpr::Refine(r) => collect_refinement_names(r, &mut out),
                _ => {}
            }
        }
        out
    }

    /// Replaces placeholders by their bindings, repeatedly. Unbound
    /// placeholders are left in place; `depth` guards against cyclic bindings.
    pub fn substitute(&self, bindings: &BTreeMap<String, ChangeExpr>) -> ChangeExpr {
        self.substitute_bounded(bindings, bindings.len() + 1)
    }

    fn substitute_bounded(&self, bindings: &BTreeMap<String, ChangeExpr>, depth: usize) -> ChangeExpr {
        match self {
            ChangeExpr::Unknown(n) => match bindings.get(n) {
                Some(v) if depth > 0 => v.substitute_bounded(bindings, depth - 1),
                _ => self.clone(),
            },
            ChangeExpr::Seq(a, b) => ChangeExpr::seq(
                a.substitute_bounded(bindings, depth),
                b.substitute_bounded(bindings, depth),
            ),
            ChangeExpr::Par(a, b) => ChangeExpr::par(
                a.substitute_bounded(bindings, depth),
                b.substitute_bounded(bindings, depth),
            ),
            other => other.clone(),
        }
    }
}

fn collect_refinement_names(r: &Refinement, out: &mut BTreeSet<String>) {
    match &r.target {
        RefineTarget::Domain(n) => {
            out.insert(n.clone());
        }
        RefineTarget::Refined(inner) => collect_refinement_names(inner, out),
    }
    for d in r.parts() {
        out.extend(d.names());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    ProblemOwner,
    ProblemSolvingDelegate,
    ImplementationDelegate,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::ProblemOwner => "problem-owner",
            Role::ProblemSolvingDelegate => "problem-solving-delegate",
            Role::ImplementationDelegate => "implementation-delegate",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "problem-owner" => Ok(Role::ProblemOwner),
            "problem-solving-delegate" => Ok(Role::ProblemSolvingDelegate),
            "implementation-delegate" => Ok(Role::ImplementationDelegate),
            _ => Err(format!("unknown stakeholder role '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stakeholder {
    pub name: String,
    pub role: Role,
    pub trusts: BTreeSet<String>,
}

/// A change problem `env (+) change |= validator : need`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Problem {
    pub env: Environment,
    pub change: ChangeExpr,
    pub validator: String,
    pub need: Need,
}

impl Problem {
    /// Domain, phenomenon and need names the problem mentions.
    pub fn references(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.env.names().into_iter().collect();
        out.extend(phenomena_universe(&self.env));
        out.extend(self.change.domain_names());
        out.extend(self.need.atoms().into_iter().map(String::from));
        out
    }
}

/// Everything declared in a `model` block: the current organisational state,
/// the catalogue of proposed domains changes may introduce, stakeholders and
/// needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub name: Option<String>,
    pub phenomena: Vec<Phenomenon>,
    pub state: Environment,
    pub proposed: Vec<Domain>,
    pub stakeholders: Vec<Stakeholder>,
    pub needs: Vec<(String, String)>,
}

impl Model {
    pub fn stakeholder(&self, name: &str) -> Option<&Stakeholder> {
        self.stakeholders.iter().find(|s| s.name == name)
    }

    pub fn trusts(&self, truster: &str, trustee: &str) -> bool {
        self.stakeholder(truster)
            .is_some_and(|s| s.trusts.contains(trustee))
    }

    /// Looks a domain up in the current state, then among proposed domains.
    pub fn catalogue_domain(&self, name: &str) -> Option<&Domain> {
        self.state
            .domain(name)
            .or_else(|| self.proposed.iter().find(|d| d.name == name))
    }

    pub fn phenomenon(&self, name: &str) -> Option<&Phenomenon> {
        self.phenomena.iter().find(|p| p.name == name)
    }

    pub fn need(&self, name: &str) -> Option<Need> {
        self.needs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, d)| Need::atom(n.clone(), d.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChangeError {
    #[error("change still contains the unsolved placeholder ?{0}")]
    Unsolved(String),
    #[error("domain '{0}' already exists")]
    AddExisting(String),
    #[error("cannot cancel '{0}': no such domain")]
    CancelMissing(String),
    #[error("cannot refine '{0}': no such domain")]
    RefineMissing(String),
    #[error("removing '{domain}' orphans {phenomena:?}")]
    DanglingControl {
        domain: String,
        phenomena: BTreeSet<String>,
    },
    #[error("parallel branches conflict on domains {domains:?} and phenomena {phenomena:?}")]
    ParConflict {
        domains: BTreeSet<String>,
        phenomena: BTreeSet<String>,
    },
    #[error("result is not well formed: {0}")]
    IllFormed(#[from] ModelError),
}

impl ChangeError {
    /// Stable short name used in diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            ChangeError::Unsolved(_) => "unsolved",
            ChangeError::AddExisting(_) => "add-existing",
            ChangeError::CancelMissing(_) => "cancel-missing",
            ChangeError::RefineMissing(_) => "refine-missing",
            ChangeError::DanglingControl { .. } => "dangling-control",
            ChangeError::ParConflict { .. } => "par-conflict",
            ChangeError::IllFormed(_) => "ill-formed",
        }
    }
}

/// `env (+) change`. Sequences are applied stage by stage, each stage
/// checked for orphaned control and well-formedness; parallel branches are
/// applied in a canonical order after the conflict check.
pub fn apply_change(env: &Environment, change: &ChangeExpr) -> Result<Environment, ChangeError> {
    if let Some(p) = change.unknowns().into_iter().next() {
        return Err(ChangeError::Unsolved(p));
    }
    apply_staged(env, change)
}

fn apply_staged(env: &Environment, change: &ChangeExpr) -> Result<Environment, ChangeError> {
    match change {
        ChangeExpr::Seq(a, b) => {
            let mid = apply_staged(env, a)?;
            apply_staged(&mid, b)
        }
        _ => {
            let mut out = env.clone();
            apply_raw(&mut out, change)?;
            check_orphans(env, &out)?;
            out.check_well_formed()?;
            Ok(out)
        }
    }
}

/// Phenomena whose controller disappeared while somebody still observes them.
fn check_orphans(before: &Environment, after: &Environment) -> Result<(), ChangeError> {
    let still_controlled = after.controlled();
    let observed = after.observed();
    let mut orphans: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for p in before.controlled() {
        if !still_controlled.contains(&p) && observed.contains(&p) {
            let owner = before
                .controller_of(&p)
                .map(|d| d.name.clone())
                .unwrap_or_default();
            orphans.entry(owner).or_default().insert(p);
        }
    }
    match orphans.into_iter().next() {
        Some((domain, phenomena)) => Err(ChangeError::DanglingControl { domain, phenomena }),
        None => Ok(()),
    }
}

fn apply_raw(env: &mut Environment, change: &ChangeExpr) -> Result<(), ChangeError> {
    match change {
        ChangeExpr::Skip => Ok(()),
        ChangeExpr::Unknown(n) => Err(ChangeError::Unsolved(n.clone())),
        ChangeExpr::Add(d) => {
            let existing: BTreeSet<String> = env.names().into_iter().collect();
            if let Some(clash) = d.names().into_iter().find(|n| existing.contains(n)) {
                return Err(ChangeError::AddExisting(clash));
            }
            env.domains.push(d.clone());
            Ok(())
        }
        ChangeExpr::Cancel(name) => {
            if remove_domain(&mut env.domains, name) {
                Ok(())
            } else {
                Err(ChangeError::CancelMissing(name.clone()))
            }
        }
        ChangeExpr::Refine(r) => apply_refinement(env, r),
        ChangeExpr::Seq(a, b) => {
            apply_raw(env, a)?;
            apply_raw(env, b)
        }
        ChangeExpr::Par(..) => {
            let mut branches = change.par_parts();
            for (i, a) in branches.iter().enumerate() {
                for b in &branches[i + 1..] {
                    check_par_conflict(env, a, b)?;
                }
            }
            // Branches are independent once conflict-free; a canonical order
            // makes the result independent of how the Par was written.
            branches.sort_by_key(|b| b.to_string());
            for b in branches {
                apply_raw(env, b)?;
            }
            Ok(())
        }
    }
}

fn apply_refinement(env: &mut Environment, r: &Refinement) -> Result<(), ChangeError> {
    let name = match &r.target {
        RefineTarget::Domain(name) => name.clone(),
        RefineTarget::Refined(inner) => {
            apply_refinement(env, inner)?;
            env.check_well_formed()?;
            inner.root().to_string()
        }
    };
    let target = env
        .domain(&name)
        .cloned()
        .ok_or_else(|| ChangeError::RefineMissing(name.clone()))?;

    let rehomed: BTreeSet<String> = r.parts().flat_map(|d| d.controlled_all()).collect();
    let dropped: BTreeSet<String> = target
        .controlled_all()
        .into_iter()
        .filter(|p| !rehomed.contains(p))
        .collect();
    if !dropped.is_empty() {
        return Err(ChangeError::DanglingControl {
            domain: name,
            phenomena: dropped,
        });
    }

    let replaced: BTreeSet<String> = target.names().into_iter().skip(1).collect();
    let existing: BTreeSet<String> = env
        .names()
        .into_iter()
        .filter(|n| !replaced.contains(n))
        .collect();
    for part in r.parts() {
        if let Some(clash) = part.names().into_iter().find(|n| existing.contains(n)) {
            return Err(ChangeError::AddExisting(clash));
        }
    }

    let composite = Domain::composite(&target, r.retained.clone(), r.added.clone());
    replace_domain(&mut env.domains, &name, composite);
    Ok(())
}

fn replace_domain(list: &mut [Domain], name: &str, with: Domain) -> bool {
    for d in list.iter_mut() {
        if d.name == name {
            *d = with;
            return true;
        }
        if let Some(arch) = d.structure.as_mut() {
            if replace_domain(&mut arch.retained, name, with.clone())
                || replace_domain(&mut arch.added, name, with.clone())
            {
                return true;
            }
        }
    }
    false
}

/// Removes `name` from the tree. A composite whose last retained part is
/// cancelled dissolves into its added parts.
fn remove_domain(list: &mut Vec<Domain>, name: &str) -> bool {
    if let Some(i) = list.iter().position(|d| d.name == name) {
        list.remove(i);
        return true;
    }
    for i in 0..list.len() {
        let Some(arch) = list[i].structure.as_mut() else {
            continue;
        };
        let from_retained = remove_domain(&mut arch.retained, name);
        if !from_retained && !remove_domain(&mut arch.added, name) {
            continue;
        }
        if from_retained && arch.retained.is_empty() {
            let promoted = std::mem::take(&mut arch.added);
            list.splice(i..=i, promoted);
        }
        return true;
    }
    false
}

/// Domains and controlled phenomena a branch writes.
fn footprint(env: &Environment, change: &ChangeExpr) -> (BTreeSet<String>, BTreeSet<String>) {
    let domains = change.domain_names();
    let mut phenomena = BTreeSet::new();
    for atom in change.atoms() {
        match atom {
            ChangeExpr::Add(d) => phenomena.extend(d.controlled_all()),
            ChangeExpr::Cancel(n) => {
                if let Some(d) = env.domain(n) {
                    phenomena.extend(d.controlled_all());
                }
            }
            ChangeExpr::Refine(r) => {
                if let Some(d) = env.domain(r.root()) {
                    phenomena.extend(d.controlled_all());
                }
                let mut cur = Some(r);
                while let Some(step) = cur {
                    phenomena.extend(step.parts().flat_map(|d| d.controlled_all()));
                    cur = match &step.target {
                        RefineTarget::Refined(inner) => Some(inner),
                        RefineTarget::Domain(_) => None,
                    };
                }
            }
            _ => {}
        }
    }
    (domains, phenomena)
}

fn check_par_conflict(env: &Environment, a: &ChangeExpr, b: &ChangeExpr) -> Result<(), ChangeError> {
    let (da, pa) = footprint(env, a);
    let (db, pb) = footprint(env, b);
    let domains: BTreeSet<String> = da.intersection(&db).cloned().collect();
    let phenomena: BTreeSet<String> = pa.intersection(&pb).cloned().collect();
    if domains.is_empty() && phenomena.is_empty() {
        Ok(())
    } else {
        Err(ChangeError::ParConflict { domains, phenomena })
    }
}

/// The organisation pair: current state and the set of current problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Organisation {
    pub state: Environment,
    pub current_problems: BTreeSet<Need>,
}

impl Organisation {
    pub fn new(state: Environment, needs: impl IntoIterator<Item = Need>) -> Self {
        Organisation {
            state,
            current_problems: needs.into_iter().map(|n| n.normalized()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrganisationError {
    #[error("need {0} is not a current problem")]
    NeedNotCurrent(String),
    #[error(transparent)]
    Change(#[from] ChangeError),
}

/// Installs a validated solution for `need`: the state is updated and the
/// satisfied need leaves the problem set.
pub fn execute_solution(
    org: &Organisation,
    need: &Need,
    change: &ChangeExpr,
) -> Result<Organisation, OrganisationError> {
    let key = need.normalized();
    if !org.current_problems.contains(&key) {
        return Err(OrganisationError::NeedNotCurrent(key.to_string()));
    }
    let state = apply_change(&org.state, change)?;
    let mut current_problems = org.current_problems.clone();
    current_problems.remove(&key);
    Ok(Organisation {
        state,
        current_problems,
    })
}

impl fmt::Display for PhenomenonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(name: &str) -> Domain {
        Domain::new(name)
    }

    fn names(env: &Environment) -> Vec<String> {
        env.top_names()
    }

    fn dev_env() -> Environment {
        Environment::labelled(
            "DevEnv",
            vec![
                dom("OldAPI")
                    .controlling(["api.call"])
                    .observing(["build.run"]),
                dom("Docs").observing(["api.call"]),
            ],
        )
    }

    #[test]
    fn universe_of_single_domain() {
        let env = Environment::new(vec![dom("A").observing(["a"]).controlling(["b"])]);
        let expected: BTreeSet<String> = ["a", "b"].into_iter().map(String::from).collect();
        assert_eq!(phenomena_universe(&env), expected);
        assert!(phenomena_universe(&Environment::default()).is_empty());
    }

    #[test]
    fn universe_of_dev_env() {
        let expected: BTreeSet<String> = ["api.call", "build.run"].into_iter().map(String::from).collect();
        assert_eq!(phenomena_universe(&dev_env()), expected);
    }

    #[test]
    fn shared_between_api_and_docs() {
        let env = dev_env();
        let api = Environment::new(vec![env.domains[0].clone()]);
        let docs = Environment::new(vec![env.domains[1].clone()]);
        let shared = shared_phenomena(&api, &docs);
        assert_eq!(shared.into_iter().collect::<Vec<_>>(), vec!["api.call"]);
        assert_eq!(shared_phenomena(&env, &env), phenomena_universe(&env));
        let other = Environment::new(vec![dom("X").controlling(["x"])]);
        assert!(shared_phenomena(&env, &other).is_empty());
    }

    #[test]
    fn add_appends_domain() {
        let env = Environment::new(vec![dom("sales"), dom("HR"), dom("finance")]);
        let out = apply_change(&env, &ChangeExpr::Add(dom("marketingTeam"))).unwrap();
        assert_eq!(names(&out), ["sales", "HR", "finance", "marketingTeam"]);
        assert_eq!(
            apply_change(&out, &ChangeExpr::Add(dom("HR"))),
            Err(ChangeError::AddExisting("HR".into()))
        );
    }

    #[test]
    fn cancel_removes_domain() {
        let env = Environment::new(vec![dom("sales"), dom("redundantDepartment"), dom("HR"), dom("finance")]);
        let out = apply_change(&env, &ChangeExpr::cancel("redundantDepartment")).unwrap();
        assert_eq!(names(&out), ["sales", "HR", "finance"]);
        assert_eq!(
            apply_change(&out, &ChangeExpr::cancel("redundantDepartment")),
            Err(ChangeError::CancelMissing("redundantDepartment".into()))
        );
    }

    #[test]
    fn refine_builds_composite() {
        let env = Environment::new(vec![dom("sales"), dom("ITStructure"), dom("HR"), dom("finance")]);
        let change = ChangeExpr::refine("sales", vec![dom("restructuredSales")], vec![dom("customerSupport")]);
        let out = apply_change(&env, &change).unwrap();
        assert_eq!(names(&out), ["sales", "ITStructure", "HR", "finance"]);
        let sales = &out.domains[0];
        let arch = sales.structure.as_ref().unwrap();
        assert_eq!(arch.retained, vec![dom("restructuredSales")]);
        assert_eq!(arch.added, vec![dom("customerSupport")]);
        assert_eq!(
            apply_change(&env, &ChangeExpr::refine("marketing", vec![], vec![])),
            Err(ChangeError::RefineMissing("marketing".into()))
        );
    }

    #[test]
    fn staged_api_upgrade_reaches_new_api() {
        let old = dom("OldAPI").controlling(["api.call"]);
        let old_prime = dom("OldAPI'").controlling(["api.call"]);
        let new = dom("NewAPI").controlling(["api.v2.call"]);
        let env = Environment::labelled("DevEnv", vec![old]);
        let change = ChangeExpr::seq(
            ChangeExpr::refine("OldAPI", vec![old_prime], vec![new.clone()]),
            ChangeExpr::cancel("OldAPI'"),
        );
        let out = apply_change(&env, &change).unwrap();
        assert_eq!(out, Environment::labelled("DevEnv", vec![new]));
    }

    #[test]
    fn refine_must_rehome_controlled_phenomena() {
        let env = Environment::new(vec![dom("OldAPI").controlling(["api.call"])]);
        let change = ChangeExpr::refine("OldAPI", vec![dom("Stub")], vec![dom("NewAPI").controlling(["api.v2"])]);
        match apply_change(&env, &change) {
            Err(ChangeError::DanglingControl { domain, phenomena }) => {
                assert_eq!(domain, "OldAPI");
                assert!(phenomena.contains("api.call"));
            }
            other => panic!("expected dangling control, got {other:?}"),
        }
    }

    #[test]
    fn cancel_with_observers_dangles() {
        match apply_change(&dev_env(), &ChangeExpr::cancel("OldAPI")) {
            Err(ChangeError::DanglingControl { domain, phenomena }) => {
                assert_eq!(domain, "OldAPI");
                assert_eq!(phenomena.into_iter().collect::<Vec<_>>(), vec!["api.call"]);
            }
            other => panic!("expected dangling control, got {other:?}"),
        }
    }

    #[test]
    fn skip_is_identity() {
        let env = dev_env();
        assert_eq!(apply_change(&env, &ChangeExpr::Skip).unwrap(), env);
    }

    #[test]
    fn unknown_is_rejected() {
        assert_eq!(
            apply_change(&dev_env(), &ChangeExpr::unknown("F")),
            Err(ChangeError::Unsolved("F".into()))
        );
    }

    #[test]
    fn par_conflict_on_shared_domain() {
        let env = Environment::new(vec![dom("A"), dom("B")]);
        let change = ChangeExpr::par(ChangeExpr::cancel("A"), ChangeExpr::refine("A", vec![dom("A1")], vec![]));
        assert!(matches!(apply_change(&env, &change), Err(ChangeError::ParConflict { .. })));
    }

    #[test]
    fn par_is_order_independent() {
        let env = Environment::new(vec![dom("A"), dom("B")]);
        let a = ChangeExpr::Add(dom("C"));
        let b = ChangeExpr::cancel("B");
        let ab = apply_change(&env, &ChangeExpr::par(a.clone(), b.clone())).unwrap();
        let ba = apply_change(&env, &ChangeExpr::par(b, a)).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn nested_refinement_equals_sequenced() {
        let env = Environment::new(vec![dom("D").controlling(["p"])]);
        let first = Refinement::new("D", vec![dom("D1").controlling(["p"])], vec![dom("C1")]);
        let second = Refinement::new("D", vec![dom("D2").controlling(["p"])], vec![dom("C2")]);
        let sequenced = ChangeExpr::seq(ChangeExpr::Refine(first.clone()), ChangeExpr::Refine(second.clone()));
        let nested = ChangeExpr::Refine(Refinement {
            target: RefineTarget::Refined(Box::new(first)),
            retained: second.retained,
            added: second.added,
        });
        assert_eq!(apply_change(&env, &sequenced).unwrap(), apply_change(&env, &nested).unwrap());
    }

    #[test]
    fn need_normalization() {
        let a = Need::atom("A", "");
        let b = Need::atom("B", "");
        let c = Need::atom("C", "");
        let left = Need::par(Need::par(c.clone(), a.clone()), b.clone());
        let right = Need::par(b.clone(), Need::par(a.clone(), c.clone()));
        assert_eq!(left.normalized(), right.normalized());
        let s1 = Need::seq(Need::seq(a.clone(), b.clone()), c.clone());
        let s2 = Need::seq(a.clone(), Need::seq(b.clone(), c.clone()));
        assert_eq!(s1.normalized(), s2.normalized());
        assert_ne!(Need::seq(a.clone(), b.clone()).normalized(), Need::seq(b.clone(), a.clone()).normalized());
        // not idempotent: A || A keeps both copies
        assert_eq!(Need::par(a.clone(), a.clone()).normalized().par_parts().len(), 2);
    }

    #[test]
    fn execute_solution_removes_need() {
        let need = Need::atom("New_Phone", "");
        let other = Need::atom("Budget", "");
        let org = Organisation::new(Environment::new(vec![dom("Phone")]), [need.clone(), other.clone()]);
        let out = execute_solution(&org, &need, &ChangeExpr::Add(dom("NewPhone"))).unwrap();
        assert_eq!(out.current_problems.len(), 1);
        assert!(out.current_problems.contains(&other));
        assert!(out.state.contains("NewPhone"));
        assert!(matches!(
            execute_solution(&out, &need, &ChangeExpr::Skip),
            Err(OrganisationError::NeedNotCurrent(_))
        ));
    }

    #[test]
    fn well_formedness_violations() {
        let env = Environment::new(vec![dom("A").controlling(["p"]), dom("B").controlling(["p"])]);
        assert!(matches!(env.check_well_formed(), Err(ModelError::MultipleControllers { .. })));
        let env = Environment::new(vec![dom("A").controlling(["p"]).observing(["p"])]);
        assert!(matches!(env.check_well_formed(), Err(ModelError::ObservedAndControlled { .. })));
        let env = Environment::new(vec![dom("A").controlling(["p"]).with_link("q", "p")]);
        assert!(matches!(env.check_well_formed(), Err(ModelError::LinkEndpoint { .. })));
    }
}
