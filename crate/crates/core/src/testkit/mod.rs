//! Generators and oracles shared by the property tests and the acceptance
//! suite. Enabled by the `testkit` feature.

pub mod dsl;
pub mod impact;
pub mod refine;
pub mod workflow;

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{TestCaseError, TestRunner};

/// Runs `check` on `cases` values drawn deterministically from `strategy`.
/// Rejected cases are redrawn. Returns the first failure without
/// shrinking.
pub fn run_cases<S: Strategy>(
    strategy: S,
    cases: usize,
    mut check: impl FnMut(S::Value) -> Result<(), TestCaseError>,
) -> Result<usize, String>
where
    S::Value: std::fmt::Debug + Clone,
{
    let mut runner = TestRunner::deterministic();
    let mut passed = 0;
    let mut rejected = 0;
    while passed < cases {
        let value = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        match check(value.clone()) {
            Ok(()) => passed += 1,
            Err(TestCaseError::Reject(_)) => {
                rejected += 1;
                if rejected > cases * 10 {
                    return Err(format!("too many rejected cases after {passed} passes"));
                }
            }
            Err(TestCaseError::Fail(why)) => return Err(format!("case {passed} failed: {why}\n{value:?}")),
        }
    }
    Ok(passed)
}
