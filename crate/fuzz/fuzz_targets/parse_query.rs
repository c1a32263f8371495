#![no_main]

use libfuzzer_sys::fuzz_target;
use wfre::query::{parse_query, serialize_query, to_dnf};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(tree) = parse_query(text) {
        let printed = serialize_query(&tree);
        let again = parse_query(&printed).expect("serialized query parses");
        assert_eq!(again, tree);
        let _ = to_dnf(&tree);
    }
});
