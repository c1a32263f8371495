#![no_main]

use libfuzzer_sys::fuzz_target;
use wfre::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        assert!(ckpt.params.is_finite());
        let again = Checkpoint::decode(&ckpt.encode()).expect("encoded checkpoint decodes");
        assert_eq!(again.header, ckpt.header);
    }
});
