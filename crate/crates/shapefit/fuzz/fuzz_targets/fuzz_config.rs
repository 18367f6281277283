#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = PipelineConfig::from_toml_str(text);
});
