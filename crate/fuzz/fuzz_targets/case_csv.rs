#![no_main]

use libfuzzer_sys::fuzz_target;
use usseg::metrics::{read_case_csv, write_case_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(reports) = read_case_csv(data) {
        let mut out = Vec::new();
        write_case_csv(&reports, &mut out).expect("parsed reports write");
        let again = read_case_csv(out.as_slice()).expect("written reports parse");
        assert_eq!(again.len(), reports.len());
    }
});
