use std::path::{Path, PathBuf};

use aqc_core::agrvq::CombinedIndex;
use aqc_core::bitstream::{pack, unpack, BitstreamHeader, TokenFrame};
use aqc_core::dsp::wav::read_wav;
use aqc_core::metrics::stoi;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn load_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn aqc_files_match_reference_packer() {
    let dir = fixtures().join("aqc");
    let meta = load_json(&dir.join("frames.json"));
    let cases = meta.as_object().unwrap();
    assert_eq!(cases.len(), 5);
    for (name, case) in cases {
        let bytes = std::fs::read(dir.join(format!("{name}.aqc"))).unwrap();
        let rate = case["sample_rate"].as_u64().unwrap() as u32;
        let sem_bits = case["sem_bits"].as_u64().unwrap() as u8;
        let s = case["num_acoustic"].as_u64().unwrap() as u8;
        let frames: Vec<TokenFrame> = case["frames"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| {
                let f: Vec<u64> = f.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
                let ac = f[1..].iter().map(|&a| CombinedIndex::new(a as usize).unwrap()).collect();
                TokenFrame::new(f[0] as u32, ac)
            })
            .collect();
        let header = BitstreamHeader::new(rate, sem_bits, s, frames.len() as u32);
        assert_eq!(pack(&header, &frames).unwrap(), bytes, "{name}: pack");
        let (h, decoded) = unpack(&bytes).unwrap();
        assert_eq!(h, header, "{name}: header");
        assert_eq!(decoded, frames, "{name}: frames");
    }
}

#[test]
fn stoi_matches_reference_implementation() {
    let dir = fixtures().join("stoi");
    let expected = load_json(&dir.join("expected.json"));
    let clean = read_wav(dir.join("clean.wav")).unwrap();
    for (name, want) in expected.as_object().unwrap() {
        let deg = read_wav(dir.join(format!("{name}.wav"))).unwrap();
        let got = stoi(&clean, &deg).unwrap();
        let want = want.as_f64().unwrap();
        assert!((got - want).abs() < 1e-6, "{name}: {got} vs {want}");
    }
}
