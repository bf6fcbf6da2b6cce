#![no_main]

use libfuzzer_sys::fuzz_target;
use unea::synth::SynthSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = SynthSpec::from_kv_text(text, "spec") {
            spec.validate().unwrap();
        }
    }
});
