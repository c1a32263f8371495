#![no_main]

use libfuzzer_sys::fuzz_target;
use wfre::kg::{parse_queries, queries_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(samples) = parse_queries(text) {
        let back = parse_queries(&queries_to_jsonl(&samples)).expect("written queries parse");
        assert_eq!(back, samples);
    }
});
