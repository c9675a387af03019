#![no_main]

use leaveout::ingest::{parse_count_table, Orientation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for orientation in [Orientation::FeaturesAsRows, Orientation::SamplesAsRows] {
        if let Ok(table) = parse_count_table(data, orientation) {
            let again = parse_count_table(table.to_tsv(orientation).as_bytes(), orientation).expect("written table reparses");
            assert_eq!(again, table);
        }
    }
});
