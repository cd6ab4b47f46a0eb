//! End-to-end acceptance checks. Each criterion prints one line to the
//! real stdout, so the lines show up even when test output is captured.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use deltapoe_core::calculus::{check, solution_of};
use deltapoe_core::dsl::{load, parse_environment, parse_need, pretty};
use deltapoe_core::model::{apply_change, execute_solution, Organisation};
use deltapoe_core::testkit::{self, run_cases};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use serde_json::Value;

const GOLDEN_BUDGET: Duration = Duration::from_secs(1);
const IMPACT_BUDGET: Duration = Duration::from_secs(5);
const MIN_MUTATIONS: usize = 6;
const WORLDS: usize = 100;
const ASTS: usize = 1000;
const CHAINS: usize = 200;
const RUNS: usize = 500;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn deltapoe<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_deltapoe"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn golden() -> Result<String, String> {
    let start = Instant::now();
    let r = deltapoe(["check".as_ref(), fixture("api_upgrade.poed").as_os_str()]);
    let elapsed = start.elapsed();
    ensure(r.code == 0, || format!("exit {}: {}", r.code, r.stderr))?;
    ensure(r.stdout.contains("derivation api_upgrade: Solved"), || r.stdout.clone())?;
    ensure(r.stdout.contains("solution: OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI'\n"), || r.stdout.clone())?;

    let ws = load(&[fixture("api_upgrade.poed")]).map_err(|e| e.to_string())?;
    let m = ws.model().ok_or("no model")?;
    let d = check(ws.derivation("api_upgrade").ok_or("no derivation")?, m);
    let f = solution_of(&d).map_err(|e| e.to_string())?;
    let start_env = parse_environment("DevEnv[OldAPI]", m).map_err(|e| e.to_string())?;
    let end = apply_change(&start_env, &f).map_err(|e| e.to_string())?;
    ensure(end.to_string() == "DevEnv[NewAPI]", || format!("apply gave {end}"))?;
    ensure(elapsed < GOLDEN_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("Solved, applies to {end}, {} ms", elapsed.as_millis()))
}

fn doc_variant() -> Result<String, String> {
    let r = deltapoe(["check".as_ref(), fixture("api_upgrade_doc.poed").as_os_str()]);
    ensure(r.stdout.contains("derivation api_upgrade_doc: Solved"), || r.stdout.clone())?;
    ensure(
        r.stdout.contains("solution: OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI' || OldDoc ~> d[OldDoc'](NewDoc) ; !OldDoc'"),
        || r.stdout.clone(),
    )?;
    ensure(r.stdout.contains("derivation api_doc_split: Invalid"), || r.stdout.clone())?;
    let split = r
        .stderr
        .lines()
        .find(|l| l.starts_with("api_doc_split:"))
        .ok_or_else(|| r.stderr.clone())?;
    ensure(split.contains("SideConditionViolated") && split.contains("{api.call}"), || split.to_string())?;
    ensure(r.code == 2, || format!("exit {}", r.code))?;
    Ok("parallel solution Solved, env split rejected on {api.call}".into())
}

fn mutations() -> Result<String, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixture("mutations"))
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    files.sort();
    let mut classes = BTreeSet::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        let expect = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# Expect: "))
            .ok_or_else(|| format!("{} lacks an Expect line", f.display()))?
            .trim()
            .to_string();
        let r = deltapoe(["check".as_ref(), f.as_os_str()]);
        let first = r.stderr.lines().next().unwrap_or_default();
        ensure(r.code == 2, || format!("{}: exit {}", f.display(), r.code))?;
        ensure(first.contains(&format!(": {expect}: ")), || format!("{}: expected {expect}, got '{first}'", f.display()))?;
        classes.insert(expect);
    }
    ensure(files.len() >= MIN_MUTATIONS, || format!("only {} mutations", files.len()))?;
    Ok(format!("{} mutations rejected: {}", files.len(), classes.into_iter().collect::<Vec<_>>().join(", ")))
}

fn phone_tangles() -> Result<String, String> {
    let r = deltapoe(["--format".as_ref(), "structured".as_ref(), "tangles".as_ref(), fixture("phone_problems.poed").as_os_str()]);
    ensure(r.code == 0, || format!("exit {}: {}", r.code, r.stderr))?;
    let v: Value = serde_json::from_str(&r.stdout).map_err(|e| e.to_string())?;
    let pairs = v["pairs"].as_array().ok_or("no pairs")?;
    ensure(pairs.len() == 6, || format!("{} tangled pairs, expected 6", pairs.len()))?;
    let has = |p: &Value, field: &str, name: &str| p[field].as_array().is_some_and(|a| a.iter().any(|x| x == name));
    for p in pairs {
        ensure(has(p, "domains", "Phone") && has(p, "placeholders", "F") && has(p, "validators", "G"), || p.to_string())?;
    }
    Ok("all 6 pairs share {Phone, F, G}".into())
}

fn impact() -> Result<String, String> {
    let start = Instant::now();
    let passed = run_cases(testkit::impact::world(), WORLDS, |w| testkit::impact::agrees_with_oracle(&w))?;
    let chain = fixture("chain.poed");
    let plain = deltapoe(["impact".as_ref(), chain.as_os_str(), "--edit".as_ref(), "!C".as_ref()]);
    ensure(plain.code == 0 && plain.stdout.contains("behavioural: D, E\n"), || plain.stdout.clone())?;
    let buffered = deltapoe(["impact".as_ref(), chain.as_os_str(), "--edit".as_ref(), "!C".as_ref(), "--buffers".as_ref(), "D".as_ref()]);
    ensure(buffered.code == 0 && buffered.stdout.contains("behavioural: D\n"), || buffered.stdout.clone())?;
    let elapsed = start.elapsed();
    ensure(elapsed < IMPACT_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{passed} worlds match the oracle, chain gives {{D, E}} and {{D}} with buffer D, {} ms", elapsed.as_millis()))
}

fn round_trip() -> Result<String, String> {
    let m = testkit::dsl::model();
    let mut runner = TestRunner::deterministic();
    let strategy = testkit::dsl::problem();
    let mut problems = Vec::new();
    while problems.len() < ASTS {
        let p = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        if p.env.check_well_formed().is_ok() {
            problems.push(p);
        }
    }
    for (i, p) in problems.iter().enumerate() {
        testkit::dsl::problem_round_trips(&m, p).map_err(|e| format!("ast {i}: {e}"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("catalogue.poed"), testkit::dsl::MODEL).map_err(|e| e.to_string())?;
    let mut src = String::from("import \"catalogue.poed\"\n");
    for (i, p) in problems.iter().enumerate() {
        src.push_str(&format!("problem p{i} {{ {} }}\n", pretty(p)));
    }
    let file = dir.path().join("problems.poed");
    std::fs::write(&file, src).map_err(|e| e.to_string())?;
    let r = deltapoe(["check".as_ref(), file.as_os_str()]);
    ensure(r.code == 0, || format!("exit {}: {}", r.code, r.stderr))?;
    let lines: Vec<&str> = r.stdout.lines().filter(|l| l.starts_with("problem ")).collect();
    ensure(lines.len() == ASTS, || format!("{} problems echoed", lines.len()))?;
    for (i, (line, p)) in lines.iter().zip(&problems).enumerate() {
        let mut canonical = p.clone();
        canonical.need = p.need.normalized();
        let want = format!("problem p{i} ok: {}", pretty(&canonical));
        ensure(*line == want, || format!("{line}\n  expected {want}"))?;
    }
    Ok(format!("{ASTS} problems round-trip in process and through the binary"))
}

fn refine_chains() -> Result<String, String> {
    let passed = run_cases(testkit::refine::chain(), CHAINS, |c| testkit::refine::rewrites_preserve_apply(&c))?;
    Ok(format!("{passed} chains apply identically nested and unnested"))
}

fn workflow() -> Result<String, String> {
    let legal = run_cases(testkit::workflow::choices(40), RUNS, |c| testkit::workflow::legal_case(&c))?;
    let illegal = run_cases(
        (testkit::workflow::choices(30), proptest::num::u8::ANY, proptest::num::u8::ANY),
        RUNS,
        |(c, w, k)| testkit::workflow::illegal_case(&c, w, k),
    )?;
    let drift = drift_scenario()?;
    Ok(format!("{legal} legal and {illegal} illegal runs hold the gates; {drift}"))
}

fn drift_scenario() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("wf.log");
    let model = fixture("devenv.poed");
    let problems = fixture("upgrade.poed");
    let wf = |args: &[&str]| {
        let mut all: Vec<std::ffi::OsString> = vec!["workflow".into(), "--log".into(), log.clone().into()];
        all.extend(args.iter().map(|a| a.into()));
        deltapoe(all)
    };
    let step = |args: &[&str]| {
        let r = wf(args);
        ensure(r.code == 0, || format!("{args:?}: exit {}: {}", r.code, r.stderr)).map(|()| r)
    };
    let (m, p) = (model.to_str().ok_or("path")?, problems.to_str().ok_or("path")?);
    step(&["start", m, p, "--problem", "api_upgrade", "--id", "w1", "--owner", "G", "--delegate", "D"])?;
    let r = step(&["advance", "--id", "w1", "submit-view"])?;
    ensure(r.stdout.contains("w1 CPS2"), || r.stdout.clone())?;
    step(&["advance", "--id", "w1", "request-validation"])?;
    let r = step(&["advance", "--id", "w1", "record-validation", "--rejected"])?;
    ensure(r.stdout.contains("w1 CPS1"), || r.stdout.clone())?;
    step(&["advance", "--id", "w1", "submit-view"])?;
    step(&["advance", "--id", "w1", "request-validation"])?;
    step(&["advance", "--id", "w1", "record-validation", "--granted"])?;
    let r = wf(&["advance", "--id", "w1", "complete"]);
    ensure(r.code == 1 && r.stderr.contains("illegal transition"), || format!("exit {}: {}", r.code, r.stderr))?;
    step(&["advance", "--id", "w1", "submit-solution", "--solution", "OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI'", "--references", "OldAPI,NewAPI"])?;
    step(&["advance", "--id", "w1", "request-validation"])?;
    let r = step(&["advance", "--id", "w1", "record-validation", "--granted"])?;
    ensure(r.stdout.contains("w1 CPS5"), || r.stdout.clone())?;
    let r = step(&["drift", "--touch", "OldAPI", "--description", "OldAPI retired upstream"])?;
    ensure(r.stdout.contains("solution+plan (granted"), || r.stdout.clone())?;
    let status = step(&["status"])?;
    ensure(status.stdout.contains("solution+plan by G: stale"), || status.stdout.clone())?;
    ensure(status.stdout.contains("regressed CPS5 -> CPS2"), || status.stdout.clone())?;
    Ok("drift on OldAPI stales the CPS4 grant and status reports CPS5 -> CPS2".into())
}

fn execution() -> Result<String, String> {
    let ws = load(&[fixture("api_upgrade.poed")]).map_err(|e| e.to_string())?;
    let m = ws.model().ok_or("no model")?;
    let d = check(ws.derivation("api_upgrade").ok_or("no derivation")?, m);
    let f = solution_of(&d).map_err(|e| e.to_string())?;
    let need = parse_need("UpdateAPI", m).map_err(|e| e.to_string())?;
    let org = Organisation::new(parse_environment("DevEnv[OldAPI]", m).map_err(|e| e.to_string())?, [need.clone()]);
    let after = execute_solution(&org, &need, &f).map_err(|e| e.to_string())?;
    ensure(after.current_problems.is_empty(), || format!("{:?}", after.current_problems))?;
    ensure(after.state.to_string() == "DevEnv[NewAPI]", || after.state.to_string())?;
    Ok("UpdateAPI discharged, state DevEnv[NewAPI]".into())
}

fn report(n: usize, result: Result<String, String>) -> bool {
    let line = match &result {
        Ok(detail) => format!("criterion {n}: pass ({detail})"),
        Err(why) => format!("criterion {n}: FAIL ({why})"),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    result.is_ok()
}

#[test]
fn acceptance() {
    let criteria: [fn() -> Result<String, String>; 9] = [
        golden,
        doc_variant,
        mutations,
        phone_tangles,
        impact,
        round_trip,
        refine_chains,
        workflow,
        execution,
    ];
    let failed: Vec<usize> = criteria
        .iter()
        .enumerate()
        .filter(|(i, c)| !report(i + 1, c()))
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
