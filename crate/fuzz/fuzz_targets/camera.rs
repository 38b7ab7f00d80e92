#![no_main]

use libfuzzer_sys::fuzz_target;
use rayletdf::io::cameras::parse_camera_json;

fuzz_target!(|data: &[u8]| {
    let _ = parse_camera_json(data);
});
