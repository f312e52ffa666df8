#![no_main]

use agentkit_core::ingest::{is_valid_source_id, parse_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_manifest(text) {
        for s in &m.sources {
            assert!(is_valid_source_id(&s.id));
            assert!(!s.name.trim().is_empty());
        }
        let mut ids: Vec<&str> = m.sources.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), m.sources.len());
    }
});
