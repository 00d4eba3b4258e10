#![no_main]

use libfuzzer_sys::fuzz_target;
use limbrec::dataset::FoldPlan;

fuzz_target!(|text: &str| {
    if let Ok(plan) = FoldPlan::from_json(text) {
        let again = FoldPlan::from_json(&plan.to_json()).expect("canonical form parses");
        assert_eq!(plan, again);
        let roster = plan.roster.clone();
        plan.check_roster(&roster).expect("own roster matches");
    }
});
