use std::path::PathBuf;
use std::process::Command;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Out {
    let out = Command::new(env!("CARGO_BIN_EXE_deltapoe"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("binary runs");
    Out {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

struct Case {
    args: Vec<String>,
    code: i32,
    stdout: &'static [&'static str],
    stderr: &'static [&'static str],
}

fn case(args: &[&str], code: i32, stdout: &'static [&'static str], stderr: &'static [&'static str]) -> Case {
    let args = args
        .iter()
        .map(|a| a.strip_prefix('@').map(fixture).unwrap_or_else(|| a.to_string()))
        .collect();
    Case { args, code, stdout, stderr }
}

#[test]
fn exit_codes_and_messages() {
    let cases = [
        case(&["check", "@api_upgrade.poed"], 0, &["Solved", "solution: OldAPI ~> d[OldAPI'](NewAPI) ; !OldAPI'"], &[]),
        case(&["check", "@mutations/swapped_sequence.poed"], 2, &["Invalid"], &["root.0.0.0: ThreadingMismatch"]),
        case(&["check", "@devenv.poed"], 0, &["model ok"], &[]),
        case(&["check", "@upgrade.poed"], 0, &["model ok", "problem api_upgrade ok"], &[]),
        case(&["check", "@incomplete.poed"], 1, &["Incomplete", "root.0 open (pending)"], &[]),
        case(&["check", "@no_such.poed"], 3, &[], &["no such file"]),
        case(&["check"], 3, &[], &["no input files"]),
        case(&["plan", "@api_upgrade.poed"], 0, &["stage 1\n  s1", "stage 2\n  s2", "[deadline 2024-11-01]"], &[]),
        case(&["plan", "@incomplete.poed"], 1, &[], &["not solved"]),
        case(&["plan", "@mutations/plan_cycle.poed"], 2, &[], &["cycle"]),
        case(&["plan", "@api_upgrade_doc.poed"], 3, &[], &["--derivation"]),
        case(&["plan", "@api_upgrade_doc.poed", "--derivation", "api_upgrade_doc"], 0, &["stage 2"], &[]),
        case(&["impact", "@chain.poed", "--edit", "!C"], 0, &["behavioural: D, E"], &[]),
        case(&["impact", "@chain.poed", "--edit", "!C", "--permitted", "C"], 1, &["bound: fail", "D not permitted: C -> c -> D"], &[]),
        case(&["impact", "@chain.poed", "--edit", "!C", "--permitted", "C,D,E"], 0, &["bound: pass"], &[]),
        case(&["impact", "@chain.poed", "--edit", "!C", "--buffers", "D"], 0, &["behavioural: D\n", "buffers: D"], &[]),
        case(&["impact", "@chain.poed", "--edit", "link C y -> c"], 0, &["behavioural: D, E"], &[]),
        case(&["impact", "@chain.poed", "--edit", "!Nope"], 2, &[], &["unknown domain 'Nope'"]),
        case(&["impact", "@chain.poed", "--edit", "link C zz -> c"], 2, &[], &["zz"]),
        case(&["lint", "@api_upgrade.poed"], 0, &["lint ok"], &[]),
        case(&["lint", "@mutations/missing_timeline.poed"], 1, &["root.0.0.0", "timeline"], &[]),
        case(&["tangles", "@phone_problems.poed", "--problems", "phone_funds,phone_tech"], 0, &["phone_funds / phone_tech"], &[]),
        case(&["tangles", "@phone_problems.poed", "--problems", "nope"], 3, &[], &["no problem 'nope'"]),
        case(&["frobnicate"], 3, &[], &["unrecognized subcommand"]),
        case(&["--help"], 0, &["Usage"], &[]),
    ];
    for c in &cases {
        let out = run(&c.args.iter().map(String::as_str).collect::<Vec<_>>());
        let label = c.args.join(" ");
        assert_eq!(out.code, c.code, "{label}\nstdout:\n{}\nstderr:\n{}", out.stdout, out.stderr);
        for want in c.stdout {
            assert!(out.stdout.contains(want), "{label}: stdout lacks {want:?}\n{}", out.stdout);
        }
        for want in c.stderr {
            assert!(out.stderr.contains(want), "{label}: stderr lacks {want:?}\n{}", out.stderr);
        }
    }
}

#[test]
fn structured_output_is_json() {
    let out = run(&["--format", "structured", "check", &fixture("api_upgrade.poed")]);
    let v: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(v[0]["verdict"], "Solved");
    let out = run(&["--format", "structured", "plan", &fixture("api_upgrade.poed")]);
    let v: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(v["steps"][1]["deadline"], "2024-11-01");
    let out = run(&["--format", "structured", "impact", &fixture("chain.poed"), "--edit", "!C", "--permitted", "C"]);
    let v: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(v["bound"]["pass"], false);
}

#[test]
fn config_file_sets_format_and_flag_overrides_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("deltapoe.conf");
    std::fs::write(&cfg, "# defaults\nformat = structured\ncolor = off\n").unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let out = run(&["--config", &cfg, "plan", &fixture("api_upgrade.poed")]);
    assert!(out.stdout.trim_start().starts_with('{'), "{}", out.stdout);
    let out = run(&["--config", &cfg, "--format", "text", "plan", &fixture("api_upgrade.poed")]);
    assert!(out.stdout.starts_with("plan api_upgrade"), "{}", out.stdout);
    std::fs::write(dir.path().join("bad.conf"), "shade = blue\n").unwrap();
    let out = run(&["--config", &dir.path().join("bad.conf").to_string_lossy(), "check", &fixture("devenv.poed")]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("unknown key 'shade'"));
}

#[test]
fn export_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();

    let a = path("a.dot");
    let b = path("b.dot");
    assert_eq!(run(&["export", &fixture("api_upgrade.poed"), "--graph", &a]).code, 0);
    assert_eq!(run(&["export", &fixture("api_upgrade.poed"), "--graph", &b]).code, 0);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("digraph"));
    let nodes = text.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count();
    assert!(nodes >= 8, "{nodes} nodes\n{text}");

    let open = path("open.dot");
    std::fs::write(path("empty.poed"), format!("import \"{}\"\nderivation empty {{ goal api_upgrade }}\n", fixture("upgrade.poed"))).unwrap();
    assert_eq!(run(&["export", &path("empty.poed"), "--graph", &open]).code, 0);
    let text = std::fs::read_to_string(&open).unwrap();
    let nodes: Vec<&str> = text.lines().filter(|l| l.contains("[label=") && !l.contains("->")).collect();
    assert_eq!(nodes.len(), 1, "{text}");
    assert!(nodes[0].contains("open"), "{text}");

    let imp = path("impact.dot");
    assert_eq!(run(&["export", &fixture("chain.poed"), "--graph", &imp, "--edit", "!C"]).code, 0);
    let text = std::fs::read_to_string(&imp).unwrap();
    assert!(text.contains("\"C\" [class=structural"));
    assert!(text.contains("\"E\" [class=behavioural"));

    let out = run(&["export", &fixture("api_upgrade.poed"), "--graph", "/nonexistent/dir/x.dot"]);
    assert_eq!(out.code, 3);
}

#[test]
fn workflow_commands_follow_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("wf.log").to_string_lossy().into_owned();
    let wf = |args: &[&str]| {
        let mut all = vec!["workflow", "--log", &log];
        all.extend_from_slice(args);
        run(&all)
    };
    let (m, p) = (fixture("devenv.poed"), fixture("upgrade.poed"));
    assert_eq!(wf(&["status"]).code, 0);
    let out = wf(&["start", &m, &p, "--problem", "api_upgrade", "--id", "w1", "--owner", "G", "--delegate", "D"]);
    assert!(out.stdout.contains("w1 CPS1"), "{}", out.stderr);
    let out = wf(&["start", &m, &p, "--problem", "api_upgrade", "--id", "w1", "--owner", "G", "--delegate", "D"]);
    assert_eq!(out.code, 1);
    let out = wf(&["start", &m, &p, "--problem", "api_upgrade", "--id", "w2", "--owner", "G", "--delegate", "Mallory"]);
    assert_eq!(out.code, 1, "{}", out.stdout);
    assert!(out.stderr.contains("trust"), "{}", out.stderr);

    assert!(wf(&["advance", "--id", "w1", "submit-view"]).stdout.contains("w1 CPS2"));
    wf(&["advance", "--id", "w1", "request-validation"]);
    let out = wf(&["advance", "--id", "w1", "record-validation"]);
    assert_eq!(out.code, 3);
    let out = wf(&["advance", "--id", "w1", "record-validation", "--by", "D", "--granted"]);
    assert_eq!(out.code, 1);
    assert!(wf(&["advance", "--id", "w1", "record-validation", "--rejected"]).stdout.contains("w1 CPS1"));
    let out = wf(&["advance", "--id", "w1", "complete"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("illegal transition: complete in state CPS1"));
    let out = wf(&["advance", "--id", "nope", "submit-view"]);
    assert_eq!(out.code, 1);
    let out = wf(&["drift", "--touch", "Payroll"]);
    assert!(out.stdout.contains("drift touched nothing"), "{}", out.stdout);

    let lines = std::fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(lines, 5, "refused events are not logged");
    let s = wf(&["--format", "structured", "status"]);
    let v: serde_json::Value = serde_json::from_str(&s.stdout).unwrap();
    assert!(v.to_string().contains("w1"));

    std::fs::write(&log, "not json\n").unwrap();
    let out = wf(&["status"]);
    assert_eq!(out.code, 2);
}

/// Expected `check` exit code for every fixture in the corpus.
fn corpus_code(name: &str) -> i32 {
    match name {
        n if n.starts_with("mutations/") => 2,
        "api_upgrade_doc.poed" => 2,
        "incomplete.poed" => 1,
        _ => 0,
    }
}

#[test]
fn every_fixture_has_its_exit_code() {
    let root = PathBuf::from(fixture(""));
    let mut seen = 0;
    for dir in ["", "mutations"] {
        let mut files: Vec<PathBuf> = std::fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "poed"))
            .collect();
        files.sort();
        for f in files {
            let name = f.strip_prefix(&root).unwrap().to_string_lossy().into_owned();
            let out = run(&["check", &f.to_string_lossy()]);
            assert_eq!(out.code, corpus_code(&name), "{name}\n{}", out.stderr);
            seen += 1;
        }
    }
    assert!(seen >= 16, "{seen} fixtures");
}

#[test]
fn lint_names_missing_delegation_field() {
    let dir = tempfile::tempdir().unwrap();
    let golden = std::fs::read_to_string(fixture("api_upgrade.poed")).unwrap();
    let text = golden
        .replace("import \"upgrade.poed\"", &format!("import \"{}\"", fixture("upgrade.poed")))
        .lines()
        .filter(|l| !l.trim_start().starts_with("coordination "))
        .collect::<Vec<_>>()
        .join("\n");
    let f = dir.path().join("no_coordination.poed");
    std::fs::write(&f, text).unwrap();
    let out = run(&["lint", &f.to_string_lossy()]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.contains("root: MissingJustification: Delegation needs coordinationRationale"), "{}", out.stdout);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let argsets: [&[&str]; 4] = [
        &["check", &fixture("api_upgrade_doc.poed")],
        &["--format", "structured", "check", &fixture("api_upgrade.poed")],
        &["impact", &fixture("chain.poed"), "--edit", "!C", "--permitted", "C"],
        &["--format", "structured", "tangles", &fixture("phone_problems.poed")],
    ];
    for args in argsets {
        let (a, b) = (run(args), run(args));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(a.stderr, b.stderr, "{args:?}");
    }
}
