use std::collections::BTreeSet;

use serde::Serialize;

use crate::model::{phenomena_universe, Problem};

/// What two problems have in common.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TanglePair {
    pub first: String,
    pub second: String,
    pub domains: BTreeSet<String>,
    pub placeholders: BTreeSet<String>,
    pub validators: BTreeSet<String>,
    pub needs: BTreeSet<String>,
    pub phenomena: BTreeSet<String>,
}

impl TanglePair {
    pub fn is_tangled(&self) -> bool {
        !(self.domains.is_empty()
            && self.placeholders.is_empty()
            && self.validators.is_empty()
            && self.needs.is_empty()
            && self.phenomena.is_empty())
    }

    /// Shared domains, placeholders and validators as one set of names.
    pub fn shared_symbols(&self) -> BTreeSet<String> {
        self.domains
            .iter()
            .chain(&self.placeholders)
            .chain(&self.validators)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TangleReport {
    /// Only pairs that share something.
    pub pairs: Vec<TanglePair>,
}

impl TangleReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn render_text(&self) -> String {
        if self.pairs.is_empty() {
            return "no tangles\n".into();
        }
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{} / {}:", p.first, p.second));
            for (label, set) in [
                ("domains", &p.domains),
                ("placeholders", &p.placeholders),
                ("validators", &p.validators),
                ("needs", &p.needs),
                ("phenomena", &p.phenomena),
            ] {
                if !set.is_empty() {
                    let names: Vec<&str> = set.iter().map(String::as_str).collect();
                    out.push_str(&format!(" {label} {{{}}}", names.join(", ")));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn domains(p: &Problem) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = p.env.names().into_iter().collect();
    out.extend(p.change.domain_names());
    out
}

fn common(a: BTreeSet<String>, b: BTreeSet<String>) -> BTreeSet<String> {
    a.intersection(&b).cloned().collect()
}

/// Pairwise overlap between named problems.
pub fn tangles(problems: &[(String, Problem)]) -> TangleReport {
    let mut pairs = Vec::new();
    for (i, (na, a)) in problems.iter().enumerate() {
        for (nb, b) in &problems[i + 1..] {
            let needs = |p: &Problem| -> BTreeSet<String> { p.need.atoms().into_iter().map(String::from).collect() };
            let pair = TanglePair {
                first: na.clone(),
                second: nb.clone(),
                domains: common(domains(a), domains(b)),
                placeholders: common(a.change.unknowns(), b.change.unknowns()),
                validators: common([a.validator.clone()].into(), [b.validator.clone()].into()),
                needs: common(needs(a), needs(b)),
                phenomena: common(phenomena_universe(&a.env), phenomena_universe(&b.env)),
            };
            if pair.is_tangled() {
                pairs.push(pair);
            }
        }
    }
    TangleReport { pairs }
}
