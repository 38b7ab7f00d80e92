#![no_main]

use libfuzzer_sys::fuzz_target;
use rayletdf::io::pfm::{depth_from_pfm, parse_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pfm(data) {
        let _ = depth_from_pfm(&img);
    }
});
