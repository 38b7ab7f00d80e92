#![no_main]

use libfuzzer_sys::fuzz_target;
use rayletdf::io::ply::{mesh_from_ply, parse_ply, scene_from_ply};

fuzz_target!(|data: &[u8]| {
    let _ = parse_ply(data);
    let _ = scene_from_ply(data);
    let _ = mesh_from_ply(data);
});
