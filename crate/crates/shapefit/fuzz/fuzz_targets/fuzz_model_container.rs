//! The container parser re-validates every model invariant, so any
//! accepted input is all-finite and must round-trip exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::{model_from_bytes, model_to_bytes};

fuzz_target!(|data: &[u8]| {
    let Ok(model) = model_from_bytes(data) else { return };
    let back = model_from_bytes(&model_to_bytes(&model)).expect("rewrite parses");
    assert!(back == model, "model changed across a rewrite");
});
