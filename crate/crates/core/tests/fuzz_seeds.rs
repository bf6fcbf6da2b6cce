//! Runs the fuzz-target invariants over the checked-in seed corpus.

use std::fs;
use std::path::PathBuf;

use unea::config::TrainConfig;
use unea::embed::{decode_emb, encode_emb};
use unea::kg::{parse_ids, parse_pairs, parse_triples, IdMap};
use unea::synth::SynthSpec;
use unea::trainer::Manifest;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn text_parsers() {
    for (_, b) in seeds("parse_triples") {
        if let Ok(t) = parse_triples(text(&b), "triples") {
            let again: String = t.iter().map(|(h, r, x)| format!("{h}\t{r}\t{x}\n")).collect();
            assert_eq!(parse_triples(&again, "triples").unwrap(), t);
        }
    }
    let mut id_outcomes = Vec::new();
    for (_, b) in seeds("parse_ids") {
        let entries = parse_ids(text(&b), "ent_ids_1").unwrap();
        id_outcomes.push(IdMap::from_entries(entries, "ent_ids_1").is_ok());
    }
    assert_eq!(id_outcomes, [true, false]);
    let pairs: Vec<bool> = seeds("parse_pairs").iter().map(|(_, b)| parse_pairs(text(b), "ref").is_ok()).collect();
    assert_eq!(pairs, [false, true]);
}

#[test]
fn emb_decoder() {
    let ok: Vec<bool> = seeds("decode_emb")
        .iter()
        .map(|(_, b)| match decode_emb(b) {
            Ok(m) => {
                assert_eq!(decode_emb(&encode_emb(&m)).unwrap(), m);
                true
            }
            Err(_) => false,
        })
        .collect();
    // empty, nan, truncated, two_by_three
    assert_eq!(ok, [true, false, false, true]);
}

#[test]
fn config_files() {
    let cfg: Vec<bool> = seeds("train_config")
        .iter()
        .map(|(_, b)| TrainConfig::from_kv_text(text(b), "c").is_ok())
        .collect();
    assert_eq!(cfg, [true, false]);
    let spec: Vec<bool> = seeds("synth_spec")
        .iter()
        .map(|(_, b)| SynthSpec::from_kv_text(text(b), "s").is_ok())
        .collect();
    assert_eq!(spec, [false, true]);
    let manifest: Vec<bool> = seeds("manifest")
        .iter()
        .map(|(_, b)| Manifest::from_json(text(b)).is_ok())
        .collect();
    assert_eq!(manifest, [false, true]);
}
