#![no_main]

use libfuzzer_sys::fuzz_target;
use smolsens::io::{parse_measure, write_measure};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mu) = parse_measure(text) {
        // whatever parses must survive a write/parse round trip bit for bit
        let mut buf = Vec::new();
        write_measure(&mut buf, &mu).unwrap();
        let back = parse_measure(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(
            back.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            mu.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
    }
});
