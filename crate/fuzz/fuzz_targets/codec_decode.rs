#![no_main]

use icci_sc::codec::{codec_decode, read_header, CodecConfig};
use icci_sc::BitStream;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let bits = data.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1)).collect();
    let stream = BitStream::from_bits(bits).expect("binary digits");
    if read_header(&stream).is_ok() {
        let _ = codec_decode(&stream, &CodecConfig::default());
    }
});
