#![no_main]

use leaveout::ingest::{parse_outcome, OutcomeKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for kind in [OutcomeKind::Continuous, OutcomeKind::Binary, OutcomeKind::Categorical] {
        let _ = parse_outcome(data, "group", kind);
    }
});
