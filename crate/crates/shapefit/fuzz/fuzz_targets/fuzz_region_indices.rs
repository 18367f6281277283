#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::{parse_index_list, write_index_list};

fuzz_target!(|data: &[u8]| {
    let Ok(indices) = parse_index_list(data) else { return };
    let back = parse_index_list(&write_index_list(&indices)).expect("rewrite parses");
    assert_eq!(back, indices);
});
