#![no_main]

use libfuzzer_sys::fuzz_target;
use normflow::config::Preset;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(preset) = Preset::parse(text) {
            let shown = preset.to_string();
            let again = Preset::parse(&shown).expect("reparse displayed preset");
            assert_eq!(again.to_string(), shown);
        }
    }
});
