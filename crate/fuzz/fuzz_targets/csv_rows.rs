#![no_main]

use hwcost::dataset::{read_csv, write_csv_to};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_csv(data) {
        let mut out = Vec::new();
        write_csv_to(&rows, &mut out).unwrap();
        assert_eq!(read_csv(out.as_slice()).unwrap(), rows);
    }
});
