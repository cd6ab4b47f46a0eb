//! Canonical printer. Output reparses to an equal value against the model
//! it was resolved from.

use std::fmt::{self, Write as _};

use crate::model::{ChangeExpr, Domain, Environment, Model, Need, Problem, RefineTarget, Refinement};

pub trait Pretty {
    fn pretty(&self) -> String;
}

pub fn pretty(value: &impl Pretty) -> String {
    value.pretty()
}

impl Pretty for ChangeExpr {
    fn pretty(&self) -> String {
        self.to_string()
    }
}

impl Pretty for Need {
    fn pretty(&self) -> String {
        self.to_string()
    }
}

impl Pretty for Environment {
    fn pretty(&self) -> String {
        self.to_string()
    }
}

impl Pretty for Problem {
    fn pretty(&self) -> String {
        self.to_string()
    }
}

impl Pretty for Model {
    fn pretty(&self) -> String {
        pretty_model(self)
    }
}

fn domain_list(f: &mut fmt::Formatter<'_>, items: &[Domain]) -> fmt::Result {
    for (i, d) in items.iter().enumerate() {
        if i > 0 {
            f.write_char(',')?;
        }
        write!(f, "{}", DomainItem(d))?;
    }
    Ok(())
}

/// A domain as written inside environments: `Name` or `Name[..](..)`.
pub(crate) struct DomainItem<'a>(pub &'a Domain);

impl fmt::Display for DomainItem<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.name)?;
        if let Some(arch) = &self.0.structure {
            f.write_char('[')?;
            domain_list(f, &arch.retained)?;
            f.write_str("](")?;
            domain_list(f, &arch.added)?;
            f.write_char(')')?;
        }
        Ok(())
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(label) = &self.label {
            f.write_str(label)?;
        }
        f.write_char('[')?;
        for (i, d) in self.domains.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", DomainItem(d))?;
        }
        f.write_char(']')
    }
}

impl fmt::Display for Refinement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            RefineTarget::Domain(name) => f.write_str(name)?,
            RefineTarget::Refined(inner) => write!(f, "({inner})")?,
        }
        f.write_str(" ~> d[")?;
        domain_list(f, &self.retained)?;
        f.write_str("](")?;
        domain_list(f, &self.added)?;
        f.write_char(')')
    }
}

impl fmt::Display for ChangeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChangeExpr::Skip => f.write_str("()"),
            ChangeExpr::Unknown(n) => write!(f, "?{n}"),
            ChangeExpr::Add(d) => write!(f, "+{}", DomainItem(d)),
            ChangeExpr::Cancel(n) => write!(f, "!{n}"),
            ChangeExpr::Refine(r) => write!(f, "{r}"),
            ChangeExpr::Seq(a, b) => {
                match **a {
                    ChangeExpr::Seq(..) | ChangeExpr::Par(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                f.write_str(" ; ")?;
                match **b {
                    ChangeExpr::Par(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            ChangeExpr::Par(a, b) => {
                match **a {
                    ChangeExpr::Par(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                write!(f, " || {b}")
            }
        }
    }
}

impl fmt::Display for Need {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Need::Atom { name, .. } => f.write_str(name),
            Need::Seq(a, b) => {
                match **a {
                    Need::Seq(..) | Need::Par(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                f.write_str(" ; ")?;
                match **b {
                    Need::Par(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            Need::Par(a, b) => {
                match **a {
                    Need::Par(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                write!(f, " || {b}")
            }
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (+) {} |= {} : {}",
            self.env, self.change, self.validator, self.need
        )
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Block form of a named problem.
pub fn pretty_problem(name: &str, problem: &Problem) -> String {
    format!(
        "problem {name} {{\n  env {}\n  change {}\n  validator {}\n  need {}\n}}\n",
        problem.env, problem.change, problem.validator, problem.need
    )
}

fn pretty_domain(out: &mut String, keyword: &str, d: &Domain) {
    let _ = write!(out, "  {keyword} {} {{", d.name);
    let join = |set: &std::collections::BTreeSet<String>| set.iter().cloned().collect::<Vec<_>>().join(", ");
    if !d.observed.is_empty() {
        let _ = write!(out, " observes {}", join(&d.observed));
    }
    if !d.controlled.is_empty() {
        let _ = write!(out, " controls {}", join(&d.controlled));
    }
    for l in &d.links {
        let _ = write!(out, " causes {} -> {}", l.cause, l.effect);
    }
    if !d.description.is_empty() {
        let _ = write!(out, " description {}", quote(&d.description));
    }
    out.push_str(" }\n");
}

pub fn pretty_model(model: &Model) -> String {
    let mut out = String::from("model ");
    if let Some(name) = &model.name {
        out.push_str(name);
        out.push(' ');
    }
    out.push_str("{\n");
    for p in &model.phenomena {
        let _ = writeln!(out, "  phenomenon {} : {}", p.name, p.kind);
    }
    for d in &model.state.domains {
        pretty_domain(&mut out, "domain", d);
    }
    for d in &model.proposed {
        pretty_domain(&mut out, "proposed domain", d);
    }
    for s in &model.stakeholders {
        let _ = write!(out, "  stakeholder {} : {}", s.name, s.role);
        if !s.trusts.is_empty() {
            let names: Vec<&str> = s.trusts.iter().map(String::as_str).collect();
            let _ = write!(out, " {{ trusts {} }}", names.join(", "));
        }
        out.push('\n');
    }
    for (name, desc) in &model.needs {
        if desc.is_empty() {
            let _ = writeln!(out, "  need {name}");
        } else {
            let _ = writeln!(out, "  need {name} {}", quote(desc));
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_change, parse_model, parse_need, parse_problem};

    const SALES: &str = r#"
model Org {
  domain sales { }
  domain ITStructure { }
  domain HR { }
  domain finance { }
  proposed domain restructuredSales { }
  proposed domain customerSupport { }
  proposed domain OldAPI { }
  proposed domain OldAPI' { }
  need A
  need B
  need C
  stakeholder Manager : problem-owner
}
"#;

    #[test]
    fn refine_prints_canonically() {
        let m = parse_model(SALES).unwrap();
        let c = parse_change("sales ~> d[ restructuredSales ]( customerSupport )", &m).unwrap();
        assert_eq!(pretty(&c), "sales ~> d[restructuredSales](customerSupport)");
        assert_eq!(pretty(&parse_change("!OldAPI'", &m).unwrap()), "!OldAPI'");
    }

    #[test]
    fn parens_only_where_needed() {
        let m = parse_model(SALES).unwrap();
        for src in [
            "!HR ; !finance || !sales",
            "(!HR || !finance) ; !sales",
            "(!HR ; !finance) ; !sales",
            "!HR ; (!finance || !sales)",
            "(sales ~> d[restructuredSales]()) ~> d[](customerSupport)",
            "() ; +customerSupport",
        ] {
            let c = parse_change(src, &m).unwrap();
            let printed = pretty(&c);
            assert_eq!(parse_change(&printed, &m).unwrap(), c, "{src} -> {printed}");
        }
        let c = parse_change("(!HR ; !finance) ; !sales", &m).unwrap();
        assert_eq!(pretty(&c), "(!HR ; !finance) ; !sales");
    }

    #[test]
    fn need_normal_form_prints_sorted() {
        let m = parse_model(SALES).unwrap();
        let n = parse_need("C || A ; B || A", &m).unwrap();
        assert_eq!(pretty(&n), "A || C || A ; B");
    }

    #[test]
    fn model_round_trip() {
        let m = parse_model(SALES).unwrap();
        assert_eq!(parse_model(&pretty_model(&m)).unwrap(), m);
    }

    #[test]
    fn problem_round_trip_both_forms() {
        let m = parse_model(SALES).unwrap();
        let p = parse_problem("problem p { Org[sales, HR] (+) ?F |= Manager : A ; B }", &m).unwrap();
        assert_eq!(p.to_string(), "Org[sales, HR] (+) ?F |= Manager : A ; B");
        assert_eq!(parse_problem(&pretty_problem("p", &p), &m).unwrap(), p);
    }
}
