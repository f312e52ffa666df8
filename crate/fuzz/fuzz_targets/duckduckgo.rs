#![no_main]

use agentkit_core::ext::websearch::parse_duckduckgo_html;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let html = String::from_utf8_lossy(data);
    for r in parse_duckduckgo_html(&html) {
        assert!(!r.url.is_empty());
    }
});
