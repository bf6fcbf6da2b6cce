#![no_main]

use libfuzzer_sys::fuzz_target;
use unea::kg::parse_triples;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(triples) = parse_triples(text, "triples") {
        let again: String = triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
        assert_eq!(parse_triples(&again, "triples").unwrap(), triples);
    }
});
