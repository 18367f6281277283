#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::{parse_point_csv, write_point_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = parse_point_csv(data) else { return };
    let back = parse_point_csv(&write_point_csv(&cloud)).expect("rewrite parses");
    assert_eq!(back.points(), cloud.points());
    if cloud.has_complete_normals() {
        assert_eq!(back.normals(), cloud.normals());
    }
});
