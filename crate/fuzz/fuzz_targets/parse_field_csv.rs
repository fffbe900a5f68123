#![no_main]

use libfuzzer_sys::fuzz_target;
use normflow::geometry::Geometry;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = normflow::io::parse_field_csv(text) {
            // matching against a grid must not panic either
            if let Ok(geom) = Geometry::interval(1.0, 8) {
                let _ = table.into_field(&geom);
            }
        }
    }
});
