use deltapoe_core::dsl::{parse_model, pretty_model};
use deltapoe_core::testkit::dsl::{
    change, change_round_trips, environment, environment_round_trips, model, need, need_round_trips, problem,
    problem_round_trips,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn problems_round_trip(p in problem()) {
        problem_round_trips(&model(), &p)?;
    }

    #[test]
    fn changes_round_trip(c in change()) {
        change_round_trips(&model(), &c)?;
    }

    #[test]
    fn needs_round_trip(n in need()) {
        need_round_trips(&model(), &n)?;
    }

    #[test]
    fn environments_round_trip(e in environment()) {
        environment_round_trips(&model(), &e)?;
    }
}

#[test]
fn catalogue_model_round_trips() {
    let m = model();
    assert_eq!(parse_model(&pretty_model(&m)).unwrap(), m);
}
