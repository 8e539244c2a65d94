#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = icci_cli::pgm::decode_pgm(data) {
        assert_eq!(g.pixels.len(), g.width * g.height);
    }
});
