#![no_main]

use libfuzzer_sys::fuzz_target;
use qdiff::noise::DetectorErrorModel;

fuzz_target!(|text: &str| {
    if let Ok(dem) = DetectorErrorModel::parse(text) {
        let again = DetectorErrorModel::parse(&dem.to_text()).expect("serialized model reparses");
        assert_eq!(dem, again);
        dem.to_code_model().expect("parsed model converts");
    }
});
