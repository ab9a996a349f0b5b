#![no_main]

use libfuzzer_sys::fuzz_target;
use usseg::mhd::{decode, format_header, parse_header};

// Header text, then a NUL, then the payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else { return };
    let Ok(header) = parse_header(text) else { return };
    let raw = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(vol) = decode(&header, raw) {
        let again = parse_header(&format_header(&vol, &header.data_file)).expect("own header parses");
        assert_eq!(again.grid, header.grid);
    }
});
