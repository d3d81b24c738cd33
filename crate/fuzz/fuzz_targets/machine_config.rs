#![no_main]

use hwcost::oracle::MachineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = hwcost::kv::parse(text);
    if let Ok(m) = MachineConfig::from_text(text) {
        assert_eq!(MachineConfig::from_text(&m.to_text()).unwrap(), m);
    }
});
