#![no_main]

use agentkit_core::index::{decode_artifact, encode_artifact};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(kb) = decode_artifact(data) {
        // Whatever decodes must survive a second round trip unchanged.
        let bytes = encode_artifact(&kb);
        let again = decode_artifact(&bytes).expect("re-encoded artifact decodes");
        assert_eq!(again.chunks(), kb.chunks());
        assert_eq!(encode_artifact(&again), bytes);
    }
});
