#![no_main]

use libfuzzer_sys::fuzz_target;
use specact::{parse_trace_line, parse_traces_jsonl, traces_to_jsonl};

// Whatever parses re-serializes to a line that parses to the same trace.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_trace_line(text) {
        let line = traces_to_jsonl(std::slice::from_ref(&t));
        assert_eq!(parse_trace_line(line.trim_end()).unwrap(), t);
    }
    let _ = parse_traces_jsonl(text);
});
