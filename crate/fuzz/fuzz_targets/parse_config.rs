#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Err(errors) = normflow::config::parse_config(text, Some("fuzz")) {
            // every issue must render, and line numbers must exist in the input
            let lines = text.lines().count().max(1);
            for issue in &errors.0 {
                let _ = issue.to_string();
                if let Some(line) = issue.line {
                    assert!(line >= 1 && line <= lines + 1, "line {line} of {lines}");
                }
            }
        }
    }
});
