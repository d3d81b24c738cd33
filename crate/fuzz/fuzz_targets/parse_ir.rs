#![no_main]

use hwcost::ir::{emit_text, parse_function, parse_functions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_function(text);
    if let Ok(fs) = parse_functions(text) {
        for f in fs {
            let canonical = emit_text(&f).expect("parsed functions are valid");
            let again = parse_function(&canonical).expect("canonical text parses");
            assert_eq!(emit_text(&again).unwrap(), canonical);
        }
    }
});
