use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use super::engine::{Conclusion, Derivation, DerivationNode, NodeState};
use super::types::JField;

fn status(n: &DerivationNode) -> &'static str {
    match n.state {
        NodeState::Open => "open",
        NodeState::Applied(_) => "applied",
        NodeState::Discharged => "discharged",
    }
}

fn justification(n: &DerivationNode) -> Value {
    let j = serde_json::to_value(&n.justification).unwrap_or(Value::Null);
    let mut out = Map::new();
    for f in JField::ALL {
        if n.justification.has(f) {
            if let Some(v) = j.get(f.field_name()) {
                out.insert(f.field_name().to_string(), v.clone());
            }
        }
    }
    Value::Object(out)
}

fn node_json(d: &Derivation, n: &DerivationNode) -> Value {
    let conclusion = d.resolved(n);
    let mut v = json!({
        "path": n.path.to_string(),
        "status": status(n),
        "conclusion": conclusion.to_string(),
        "rule": n.rule().map(|r| r.name()),
        "premises": n.premises.iter().map(|p| node_json(d, p)).collect::<Vec<_>>(),
        "evidence": n.evidence,
        "plan": n.plan,
        "justification": justification(n),
        "validations": n.validations,
    });
    if let Conclusion::Greenfield { focus, .. } = &conclusion {
        v["focus"] = json!(focus);
    }
    if !n.claimed_evidence.is_empty() {
        let claimed: Map<String, Value> = n
            .claimed_evidence
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        v["claimedEvidence"] = Value::Object(claimed);
    }
    if !n.alternatives.is_empty() {
        v["alternatives"] = json!(n.alternatives);
    }
    v
}

/// The whole tree as nested JSON objects.
pub fn derivation_json(d: &Derivation) -> Value {
    json!({
        "derivation": d.name,
        "verdict": d.verdict().label(),
        "bindings": d.bindings.iter().map(|(k, v)| (k.clone(), v.to_string())).collect::<std::collections::BTreeMap<_, _>>(),
        "diagnostics": d.diagnostics,
        "root": node_json(d, &d.root),
    })
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: one node per derivation node, edges to premises.
pub fn derivation_dot(d: &Derivation) -> String {
    let mut out = format!("digraph \"{}\" {{\n  rankdir=BT;\n  node [shape=box, fontname=\"monospace\"];\n", escape(&d.name));
    for n in d.root.walk() {
        let rule = n.rule().map_or(status(n).to_string(), |r| r.name().to_string());
        let label = format!("{}\\n{rule}\\n{}", n.path, escape(&d.resolved(n).to_string()));
        let style = match n.state {
            NodeState::Open => ", style=dashed",
            NodeState::Discharged => ", style=rounded",
            NodeState::Applied(_) => "",
        };
        let _ = writeln!(out, "  \"{}\" [label=\"{label}\"{style}];", n.path);
        for p in &n.premises {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", p.path, n.path);
        }
    }
    out.push_str("}\n");
    out
}
