use std::path::PathBuf;

use deltapoe_core::calculus::{check, extract_plan, solution_of, Derivation, Verdict};
use deltapoe_core::dsl::{load, parse_environment, Workspace};
use deltapoe_core::model::apply_change;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn replay(file: &str, name: &str) -> (Workspace, Derivation) {
    let ws = load(&[fixture(file)]).unwrap_or_else(|e| panic!("{file}: {}", e.first()));
    let script = ws.derivation(name).expect("derivation present").clone();
    let d = check(&script, ws.model().unwrap());
    (ws, d)
}

#[test]
fn golden_api_upgrade_is_solved() {
    let (ws, d) = replay("api_upgrade.poed", "api_upgrade");
    assert_eq!(d.verdict(), Verdict::Solved, "{:#?}", d.diagnostics);
    let f = solution_of(&d).unwrap();
    assert_eq!(f.to_string(), "OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI'");
    let m = ws.model().unwrap();
    let start = parse_environment("DevEnv[OldAPI]", m).unwrap();
    let end = parse_environment("DevEnv[NewAPI]", m).unwrap();
    assert_eq!(apply_change(&start, &f).unwrap(), end);
    let envs: Vec<String> = d.discharged_environments().into_iter().map(|(_, e)| e.to_string()).collect();
    assert_eq!(envs, ["DevEnv[OldAPI[OldAPI'](NewAPI)]", "DevEnv[NewAPI]"]);
}

#[test]
fn golden_plan_orders_stages() {
    let (_, d) = replay("api_upgrade.poed", "api_upgrade");
    let plan = extract_plan(&d).unwrap();
    assert_eq!(plan.stages, vec![vec!["s1".to_string()], vec!["s2".to_string()]]);
    assert_eq!(plan.step("s2").unwrap().deadline.as_deref(), Some("2024-11-01"));
}

#[test]
fn doc_variant_solved_and_split_rejected() {
    let (_, d) = replay("api_upgrade_doc.poed", "api_upgrade_doc");
    assert_eq!(d.verdict(), Verdict::Solved, "{:#?}", d.diagnostics);
    assert_eq!(
        solution_of(&d).unwrap().to_string(),
        "OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI' || OldDoc ~> d[OldDoc'](NewDoc) ; !OldDoc'"
    );
    let plan = extract_plan(&d).unwrap();
    assert_eq!(plan.stages.len(), 2);

    let (_, split) = replay("api_upgrade_doc.poed", "api_doc_split");
    let Verdict::Invalid(diags) = split.verdict() else { panic!("split accepted") };
    let shared: Vec<&str> = diags[0].detail.iter().map(String::as_str).collect();
    assert_eq!(shared, ["api.call"]);
}

#[test]
fn every_mutation_is_rejected_with_its_class() {
    let dir = fixture("mutations");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(files.len() >= 6);
    for f in files {
        let text = std::fs::read_to_string(&f).unwrap();
        let expected = text.lines().next().and_then(|l| l.strip_prefix("# Expect: ")).expect("header").trim().to_string();
        let ws = load(&[&f]).unwrap_or_else(|e| panic!("{}: {}", f.display(), e.first()));
        let d = check(&ws.derivations[0], ws.model().unwrap());
        let Verdict::Invalid(diags) = d.verdict() else {
            panic!("{} accepted: {:?}", f.display(), d.verdict())
        };
        assert_eq!(diags[0].class.to_string(), expected, "{}: {diags:#?}", f.display());
    }
}

#[test]
fn phone_subproblems_tangle_on_phone_f_and_g() {
    use deltapoe_core::calculus::tangles;
    let ws = load(&[fixture("phone_problems.poed")]).unwrap();
    let subs: Vec<(String, _)> = ["phone_funds", "phone_tech", "phone_diary"]
        .iter()
        .map(|n| (n.to_string(), ws.problem(n).unwrap().problem.clone()))
        .collect();
    let report = tangles(&subs);
    assert_eq!(report.pairs.len(), 3);
    for p in &report.pairs {
        let shared: Vec<String> = p.shared_symbols().into_iter().collect();
        assert_eq!(shared, ["F", "G", "Phone"], "{} / {}", p.first, p.second);
        assert!(p.needs.contains("New_Phone"));
    }
}
