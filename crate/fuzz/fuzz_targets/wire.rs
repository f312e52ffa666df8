#![no_main]

use agentkit_core::wire::{salvage_call_id, WireMessage};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(frame) = std::str::from_utf8(data) else {
        return;
    };
    match WireMessage::decode(frame) {
        Ok(msg) => {
            let back = WireMessage::decode(&msg.encode()).expect("encoded frame decodes");
            assert_eq!(back, msg);
        }
        Err(e) => {
            let _ = e.kind();
            let _ = salvage_call_id(frame);
        }
    }
});
