#![no_main]

use leaveout::ingest::parse_taxonomy;
use leaveout::phylo::build_taxonomy_tree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = parse_taxonomy(data) {
        let _ = build_taxonomy_tree(&file.assignments);
    }
});
