#![no_main]

use agentkit_core::tools::{check_input_schema, validate_args};
use libfuzzer_sys::fuzz_target;
use serde_json::Value;

// Input: a JSON schema and a JSON argument value separated by a NUL byte.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|b| *b == 0) else {
        return;
    };
    let (Ok(schema), Ok(args)) = (
        serde_json::from_slice::<Value>(&data[..split]),
        serde_json::from_slice::<Value>(&data[split + 1..]),
    ) else {
        return;
    };
    if check_input_schema(&schema).is_err() {
        return;
    }
    if let Ok(filled) = validate_args(&schema, &args) {
        // Defaults are already filled in, so validation is a fixed point.
        assert_eq!(validate_args(&schema, &filled).as_ref(), Ok(&filled));
    }
});
