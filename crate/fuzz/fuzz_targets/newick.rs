#![no_main]

use leaveout::phylo::{parse_newick, parse_newick_bytes, NewickOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(tree) = parse_newick_bytes(data, NewickOptions::default()) else {
        return;
    };
    // whatever parses must survive a write/read cycle unchanged
    let text = tree.to_newick();
    let again = parse_newick(&text).expect("serialized tree reparses");
    assert_eq!(again.to_newick(), text);
    let _ = tree.branch_table();
});
