#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(samples) = normflow::io::parse_trace_csv(text) {
            // a parsed trace writes back and parses to the same samples
            let csv = normflow::io::trace_to_csv(&samples).expect("write parsed trace");
            let again = normflow::io::parse_trace_csv(&csv).expect("reparse written trace");
            assert_eq!(samples.len(), again.len());
        }
    }
});
