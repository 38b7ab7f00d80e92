#![no_main]

use libfuzzer_sys::fuzz_target;
use rayletdf::io::checkpoint::{parse_checkpoint, parse_features, parse_volume};

// The three binary formats share one target; the magic picks the parser
// that gets past the header.
fuzz_target!(|data: &[u8]| {
    let _ = parse_checkpoint(data);
    let _ = parse_features(data);
    let _ = parse_volume(data);
});
