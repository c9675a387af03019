#![no_main]

use leaveout::phylo::{TaxonRef, TaxonSet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = text.parse::<TaxonRef>() {
        assert_eq!(t.to_string().parse::<TaxonRef>().unwrap(), t);
    }
    let _ = text.parse::<TaxonSet>();
});
