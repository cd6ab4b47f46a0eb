use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::parser::{parse_derivation, parse_model, parse_problem_file, Parser, ProblemDecl};
use super::{Diagnostic, Diagnostics, Pos};
use crate::calculus::DerivationScript;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Model,
    Problem,
    Derivation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub kind: SourceKind,
    pub imports: Vec<String>,
}

impl SourceFile {
    /// Classifies `content` by its first top-level keyword.
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Result<Self, Diagnostics> {
        let path = path.into();
        let content = content.into();
        let located = |d: Diagnostic| Diagnostics::from(d.in_file(path.clone()));
        let mut p = Parser::new(&content, None).map_err(located)?;
        let imports = p.skip_imports().map_err(located)?;
        let kind = match p.keyword_here().as_deref() {
            Some("model") => SourceKind::Model,
            Some("problem") => SourceKind::Problem,
            Some("derivation") => SourceKind::Derivation,
            _ => {
                let pos = p.pos_here();
                return Err(located(Diagnostic::error(
                    pos,
                    "expected 'model', 'problem' or 'derivation'",
                )));
            }
        };
        Ok(SourceFile {
            path,
            content,
            kind,
            imports: imports.into_iter().map(|(s, _)| s).collect(),
        })
    }
}

/// Everything reachable from a set of input files: one model, its problems
/// and derivation scripts.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    pub files: Vec<SourceFile>,
    pub model: Option<Model>,
    pub problems: Vec<ProblemDecl>,
    pub derivations: Vec<DerivationScript>,
}

impl Workspace {
    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }

    pub fn problem(&self, name: &str) -> Option<&ProblemDecl> {
        self.problems.iter().find(|p| p.name == name)
    }

    pub fn derivation(&self, name: &str) -> Option<&DerivationScript> {
        self.derivations.iter().find(|d| d.name == name)
    }

    fn parse_all(files: Vec<SourceFile>) -> Result<Self, Diagnostics> {
        let mut ws = Workspace::default();
        let at_start = || Pos { line: 1, column: 1 };
        for f in files.iter().filter(|f| f.kind == SourceKind::Model) {
            let m = parse_model(&f.content).map_err(|e| in_file(e, &f.path))?;
            match &ws.model {
                Some(existing) if *existing != m => {
                    return Err(Diagnostic::error(at_start(), "a second, different model was loaded")
                        .in_file(f.path.clone())
                        .into())
                }
                _ => ws.model = Some(m),
            }
        }
        let needs_model = files.iter().find(|f| f.kind != SourceKind::Model);
        let model = match (&ws.model, needs_model) {
            (Some(m), _) => m.clone(),
            (None, Some(f)) => {
                return Err(Diagnostic::error(at_start(), "no model loaded; add an import of the model file")
                    .in_file(f.path.clone())
                    .into())
            }
            (None, None) => return Ok(ws.with_files(files)),
        };
        for f in files.iter().filter(|f| f.kind == SourceKind::Problem) {
            for decl in parse_problem_file(&f.content, &model).map_err(|e| in_file(e, &f.path))? {
                if ws.problem(&decl.name).is_some_and(|d| d.problem != decl.problem) {
                    return Err(Diagnostic::error(decl.pos, format!("duplicate problem '{}'", decl.name))
                        .in_file(f.path.clone())
                        .into());
                }
                if ws.problem(&decl.name).is_none() {
                    ws.problems.push(decl);
                }
            }
        }
        for f in files.iter().filter(|f| f.kind == SourceKind::Derivation) {
            let scripts = parse_derivation(&f.content, &model, &ws.problems).map_err(|e| in_file(e, &f.path))?;
            ws.derivations.extend(scripts);
        }
        Ok(ws.with_files(files))
    }

    fn with_files(mut self, files: Vec<SourceFile>) -> Self {
        self.files = files;
        self
    }
}

fn in_file(e: Diagnostics, path: &str) -> Diagnostics {
    Diagnostics(e.0.into_iter().map(|d| d.in_file(path)).collect())
}

/// Loads `paths` and, transitively, the files they import. Imports resolve
/// relative to the importing file.
pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Workspace, Diagnostics> {
    let mut seen = BTreeSet::new();
    let mut files = Vec::new();
    for p in paths {
        collect(p.as_ref(), &mut seen, &mut files, None)?;
    }
    Workspace::parse_all(files)
}

/// Parses in-memory sources (no import resolution), in the given order.
pub fn load_str(sources: &[(&str, &str)]) -> Result<Workspace, Diagnostics> {
    let files = sources
        .iter()
        .map(|(path, content)| SourceFile::new(*path, *content))
        .collect::<Result<Vec<_>, _>>()?;
    Workspace::parse_all(files)
}

fn collect(
    path: &Path,
    seen: &mut BTreeSet<PathBuf>,
    files: &mut Vec<SourceFile>,
    importer: Option<&str>,
) -> Result<(), Diagnostics> {
    let key = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    if !seen.insert(key) {
        return Ok(());
    }
    let shown = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| {
        let d = Diagnostic::error(Pos { line: 1, column: 1 }, format!("cannot read '{shown}': {e}"));
        Diagnostics::from(match importer {
            Some(f) => d.in_file(f),
            None => d.in_file(shown.clone()),
        })
    })?;
    let file = SourceFile::new(shown.clone(), content)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for imp in &file.imports {
        collect(&base.join(imp), seen, files, Some(&shown))?;
    }
    files.push(file);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_comes_from_keyword() {
        let f = SourceFile::new("weird-name.model", "# hi\nimport \"m.poed\"\nproblem p { }").unwrap();
        assert_eq!(f.kind, SourceKind::Problem);
        assert_eq!(f.imports, ["m.poed"]);
        assert!(SourceFile::new("x", "").is_err());
    }

    #[test]
    fn problems_need_a_model() {
        let e = load_str(&[("p.poed", "problem p { }")]).unwrap_err();
        assert!(e.first().message.contains("no model"));
        assert_eq!(e.first().file.as_deref(), Some("p.poed"));
    }

    #[test]
    fn in_memory_workspace() {
        let ws = load_str(&[
            ("m", "model { domain A { } stakeholder G : problem-owner need N }"),
            ("p", "problem p { [A] (+) ?F |= G : N }"),
        ])
        .unwrap();
        assert_eq!(ws.problems.len(), 1);
        assert_eq!(ws.problem("p").unwrap().problem.change.to_string(), "?F");
    }
}
