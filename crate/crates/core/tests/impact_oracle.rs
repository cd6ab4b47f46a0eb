use deltapoe_core::testkit::impact::{agrees_with_oracle, extra_buffer_shrinks, world};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn propagate_matches_fixpoint_oracle(w in world()) {
        agrees_with_oracle(&w)?;
    }

    #[test]
    fn extra_buffer_never_enlarges_impact(w in world(), extra in 0..10usize) {
        extra_buffer_shrinks(&w, extra)?;
    }
}
