#![no_main]

use icci_sc::BitStream;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = BitStream::from_bytes(data) {
        assert_eq!(BitStream::from_bytes(&b.to_bytes()).unwrap(), b);
        let mut r = b.reader();
        while r.read_ue().is_some() {}
    }
});
