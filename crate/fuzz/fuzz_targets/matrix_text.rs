#![no_main]

use libfuzzer_sys::fuzz_target;
use qdiff::gf2::BinaryMatrix;

fuzz_target!(|text: &str| {
    if let Ok(m) = BinaryMatrix::parse_text(text) {
        assert_eq!(BinaryMatrix::parse_text(&m.to_text()).unwrap(), m);
    }
});
