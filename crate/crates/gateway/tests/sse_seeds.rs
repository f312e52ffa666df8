//! Replays the SSE fuzz corpus, trying every split point of each seed.

use std::path::Path;

use agentkit_gateway::SseParser;

#[test]
fn events_do_not_depend_on_chunking() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/sse");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let data = std::fs::read(entry.unwrap().path()).unwrap();
        // The first byte is the fuzz target's split point; here every split
        // point is tried.
        let body = &data[1..];
        let mut whole = SseParser::new();
        let expected = whole.feed(body);
        assert!(!expected.is_empty());
        for at in 0..=body.len() {
            let mut split = SseParser::new();
            let mut got = split.feed(&body[..at]);
            got.extend(split.feed(&body[at..]));
            assert_eq!(got, expected, "split at {at}");
            assert_eq!(split.last_event_id(), whole.last_event_id());
        }
        let mut bytewise = SseParser::new();
        let got: Vec<_> = body.iter().flat_map(|b| bytewise.feed(std::slice::from_ref(b))).collect();
        assert_eq!(got, expected);
        seen += 1;
    }
    assert!(seen >= 3);
}
