#![no_main]

use libfuzzer_sys::fuzz_target;
use shapefit::io::read_correspondence_csv;

fuzz_target!(|data: &[u8]| {
    let _ = read_correspondence_csv(data);
});
