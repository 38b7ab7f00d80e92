#![no_main]

use libfuzzer_sys::fuzz_target;
use rayletdf::io::obj::parse_obj;

fuzz_target!(|data: &[u8]| {
    let _ = parse_obj(data);
});
