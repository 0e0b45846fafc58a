#![no_main]

use libfuzzer_sys::fuzz_target;
use qdiff::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        // NaN payloads defeat PartialEq, compare the encodings instead
        let bytes = ckpt.to_bytes().unwrap();
        let again = Checkpoint::from_bytes(&bytes).expect("serialized checkpoint reloads");
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
