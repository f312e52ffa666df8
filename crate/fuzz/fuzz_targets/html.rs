#![no_main]

use agentkit_core::html::html_to_text;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = html_to_text(data);
    if text.is_empty() {
        return;
    }
    for line in text.split('\n') {
        assert!(!line.is_empty());
        assert_eq!(line, line.trim());
    }
});
