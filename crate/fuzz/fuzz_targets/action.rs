#![no_main]

use agentkit_core::agent::parse_action;
use libfuzzer_sys::fuzz_target;
use serde_json::Value;

fuzz_target!(|data: &[u8]| {
    let Ok(payload) = serde_json::from_slice::<Value>(data) else {
        return;
    };
    if let Ok(action) = parse_action(&payload) {
        assert_eq!(parse_action(&action.to_payload()).ok(), Some(action));
    }
});
