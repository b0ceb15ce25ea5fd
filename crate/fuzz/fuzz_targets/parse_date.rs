#![no_main]

use libfuzzer_sys::fuzz_target;
use subsetlab::fredmd::{parse_date, Month};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_date(text) {
        assert_eq!(Month::from_ordinal(m.ordinal()), m);
        assert_eq!(parse_date(&m.to_string()).ok(), Some(m));
    }
});
