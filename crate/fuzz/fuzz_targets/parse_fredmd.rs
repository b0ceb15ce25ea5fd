#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = subsetlab::fredmd::parse_fredmd(data) {
        assert_eq!(table.names.len(), table.tcodes.len());
        assert!(table.series.iter().all(|s| s.len() == table.dates.len()));
        let _ = subsetlab::fredmd::parse_fredmd(subsetlab::fredmd::to_csv(&table).as_bytes());
    }
});
