mod common;

use proptest::prelude::*;

use common::{arb_config, arb_policy, arb_workload, check_run};
use schedplane_core::sim::simulate_with;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn runs_conserve_work_and_tasks_and_respect_deps(w in arb_workload(), p in arb_policy(), cfg in arb_config()) {
        let r = simulate_with(&w, &p, &cfg).unwrap();
        check_run(&w, &p, &r).map_err(TestCaseError::fail)?;
        let again = simulate_with(&w, &p, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }
}
