#![no_main]

use libfuzzer_sys::fuzz_target;
use unea::kg::{parse_ids, IdMap};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_ids(text, "ent_ids_1") {
        let n = entries.len();
        if let Ok(map) = IdMap::from_entries(entries, "ent_ids_1") {
            assert_eq!(map.len(), n);
            for i in 0..n {
                assert_eq!(map.dense(map.file_id(i)), Some(i));
            }
        }
    }
});
