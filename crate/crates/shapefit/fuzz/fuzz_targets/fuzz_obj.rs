#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::{parse_obj, write_obj};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = parse_obj(data) else { return };
    let back = parse_obj(&write_obj(&cloud)).expect("rewrite parses");
    assert_eq!(back.points(), cloud.points());
    if cloud.has_complete_normals() {
        assert_eq!(back.normals(), cloud.normals());
    }
});
