#![no_main]

use libfuzzer_sys::fuzz_target;
use unea::embed::{decode_emb, encode_emb};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_emb(data) {
        assert!(m.is_finite());
        assert_eq!(decode_emb(&encode_emb(&m)).unwrap(), m);
    }
});
