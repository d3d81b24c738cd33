#![no_main]

use hwcost::models::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = ModelConfig::from_text(text) {
        let _ = c.param_count();
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }
});
