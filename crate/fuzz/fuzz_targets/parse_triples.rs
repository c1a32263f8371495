#![no_main]

use libfuzzer_sys::fuzz_target;
use wfre::kg::parse_triples;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(kg) = parse_triples(text) {
        let back = parse_triples(&kg.to_tsv()).expect("written graph parses");
        assert_eq!(back, kg);
    }
});
