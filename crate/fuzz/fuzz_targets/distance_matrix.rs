#![no_main]

use leaveout::betadiv::parse_distance_matrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = parse_distance_matrix(data) {
        for i in 0..d.len() {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..d.len() {
                assert!(d.get(i, j) >= 0.0);
            }
        }
    }
});
