#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = icci_core::ict::decode_tensor(data) {
        assert_eq!(t.data().len(), t.dims().iter().product::<usize>());
    }
});
