//! Anything the PLY parser accepts must survive both writers
//! value-exactly (normals only when the parse produced a complete set,
//! since the writers omit partial ones).

#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::{parse_ply, write_ply_ascii, write_ply_binary};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = parse_ply(data) else { return };
    let ascii = parse_ply(&write_ply_ascii(&cloud)).expect("ascii rewrite parses");
    let binary = parse_ply(&write_ply_binary(&cloud)).expect("binary rewrite parses");
    assert_eq!(ascii.points(), cloud.points());
    assert_eq!(binary.points(), cloud.points());
    if cloud.has_complete_normals() {
        assert_eq!(ascii.normals(), cloud.normals());
        assert_eq!(binary.normals(), cloud.normals());
    }
});
