//! Concrete syntax for `.poed` files: models, problems and derivation
//! scripts, plus the canonical printer.
//!
//! Surface forms: `+D` adds a domain, `!D` cancels one, `D ~> d[A,B](C)`
//! refines `D` into retained `A`, `B` and added `C`, `;` sequences, `||`
//! runs in parallel (binding looser than `;`), `?F` is an unsolved
//! placeholder, `()` the empty change, and `ENV (+) F |= G : N` is a
//! change problem validated by `G`.

mod lexer;
mod parser;
mod pretty;
mod source;

use std::fmt;

use serde::Serialize;

pub use parser::{
    parse_change, parse_derivation, parse_environment, parse_model, parse_need, parse_problem,
    parse_problem_file, ProblemDecl,
};
pub use pretty::{pretty, pretty_model, pretty_problem, Pretty};
pub use source::{load, load_str, SourceFile, SourceKind, Workspace};

/// 1-based line and column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(flatten)]
    pub pos: Pos,
    pub message: String,
    pub severity: Severity,
}

pub type ParseDiagnostic = Diagnostic;

impl Diagnostic {
    pub fn error(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            file: None,
            pos,
            message: message.into(),
            severity: Severity::Error,
        }
    }

    pub fn in_file(mut self, file: impl Into<String>) -> Self {
        self.file.get_or_insert_with(|| file.into());
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.file {
            Some(file) => write!(f, "{file}:{}: {sev}: {}", self.pos, self.message),
            None => write!(f, "{}: {sev}: {}", self.pos, self.message),
        }
    }
}

/// One or more diagnostics; returned whenever parsing or loading fails.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn first(&self) -> &Diagnostic {
        &self.0[0]
    }
}

impl From<Diagnostic> for Diagnostics {
    fn from(d: Diagnostic) -> Self {
        Diagnostics(vec![d])
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
