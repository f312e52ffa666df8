#![no_main]

use agentkit_gateway::SseParser;
use libfuzzer_sys::fuzz_target;

// The first byte picks where the stream is split; events must not depend on
// how the bytes arrive.
fuzz_target!(|data: &[u8]| {
    let Some((&cut, body)) = data.split_first() else {
        return;
    };
    let mut whole = SseParser::new();
    let expected = whole.feed(body);

    let mut split = SseParser::new();
    let at = usize::from(cut).min(body.len());
    let mut got = split.feed(&body[..at]);
    got.extend(split.feed(&body[at..]));
    assert_eq!(got, expected);

    let mut bytewise = SseParser::new();
    let got: Vec<_> = body.iter().flat_map(|b| bytewise.feed(std::slice::from_ref(b))).collect();
    assert_eq!(got, expected);
    assert_eq!(bytewise.last_event_id(), whole.last_event_id());
});
