use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use aqc_core::container::{model_sections, read_model, read_sections, write_model, TAG_DECODER};
use aqc_core::dsp::{read_wav, write_wav, CODEC_RATE};
use aqc_core::{AudioBuffer, CodecConfig, CodecModel, SemanticCodebook, WavFormat};
use ndarray::Array2;
use tempfile::TempDir;

fn aqc(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aqc"))
        .arg("-q")
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("spawn aqc")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "aqc failed: {}\n{stdout}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Fixture {
    dir: TempDir,
    model: PathBuf,
    report: serde_json::Value,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn train(dir: &Path, corpus: &Path, out: &str, report: Option<&str>) -> Output {
    let model = dir.join(out);
    let mut args: Vec<std::ffi::OsString> = vec![
        "train-stage1".into(),
        "-c".into(),
        corpus.into(),
        "-o".into(),
        model.into(),
        "--k-sem".into(),
        "64".into(),
        "--stages".into(),
        "3".into(),
        "--kmeans-iters".into(),
        "8".into(),
        "--seed".into(),
        "5".into(),
    ];
    if let Some(r) = report {
        args.extend(["--report".into(), dir.join(r).into()]);
    }
    let refs: Vec<&dyn AsRef<std::ffi::OsStr>> = args.iter().map(|a| a as _).collect();
    aqc(&refs)
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        ok(aqc(&[&"synth", &"-o", &corpus, &"--speakers", &"5", &"--per-speaker", &"2", &"--seconds", &"4", &"--seed", &"3"]));
        ok(train(dir.path(), &corpus, "m.aqm", Some("report.json")));
        let report = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        let model = dir.path().join("m.aqm");
        Fixture { dir, model, report }
    })
}

fn wav_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for spk in std::fs::read_dir(root).unwrap() {
        for f in std::fs::read_dir(spk.unwrap().path()).unwrap() {
            out.push(f.unwrap().path());
        }
    }
    out.sort();
    out
}

fn frozen(path: &Path) -> Vec<(String, Vec<u8>)> {
    read_sections(&std::fs::read(path).unwrap())
        .unwrap()
        .into_iter()
        .filter(|s| s.tag != TAG_DECODER)
        .map(|s| (s.tag_str(), s.payload))
        .collect()
}

#[test]
fn synth_writes_ten_files_and_training_converges() {
    let f = fixture();
    assert_eq!(wav_files(&f.path("corpus")).len(), 10);
    let hist: Vec<f64> = serde_json::from_value(f.report["distortion_history"].clone()).unwrap();
    assert!(hist.len() >= 2);
    for w in hist.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "distortion rose: {hist:?}");
    }
    let residual: Vec<f64> = serde_json::from_value(f.report["residual_mse"].clone()).unwrap();
    assert_eq!(residual.len(), 4);
}

#[test]
fn same_seed_gives_identical_model_bytes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(train(dir.path(), &f.path("corpus"), "again.aqm", None));
    assert_eq!(std::fs::read(dir.path().join("again.aqm")).unwrap(), std::fs::read(&f.model).unwrap());
}

#[test]
fn tiny_corpus_is_a_data_error_naming_the_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(aqc(&[&"synth", &"-o", &corpus, &"--speakers", &"1", &"--per-speaker", &"1", &"--seconds", &"1"]));
    let out = train(dir.path(), &corpus, "m.aqm", None);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at least 90"), "{err}");
    assert!(!dir.path().join("m.aqm").exists());
}

#[test]
fn later_stages_leave_codebooks_untouched() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let hq = dir.path().join("hq");
    let spk = dir.path().join("spk");
    ok(aqc(&[&"synth", &"-o", &hq, &"--speakers", &"2", &"--per-speaker", &"2", &"--seconds", &"3", &"--seed", &"8"]));
    ok(aqc(&[&"synth", &"-o", &spk, &"--speakers", &"1", &"--per-speaker", &"3", &"--seconds", &"3", &"--seed", &"9"]));
    let (m2, m3) = (dir.path().join("m2.aqm"), dir.path().join("m3.aqm"));
    let before = std::fs::read(&f.model).unwrap();

    let out = ok(aqc(&[&"train-stage2", &"-c", &hq, &"-m", &f.model, &"-o", &m2, &"--held-out", &spk]));
    assert!(out.contains("held-out MR-MEL S=3"), "{out}");
    let out = ok(aqc(&[&"train-stage3", &"-s", &spk, &"-m", &m2, &"-o", &m3, &"--use-stages", &"1,3"]));
    assert!(out.contains("unchanged"), "{out}");

    let reference = frozen(&f.model);
    assert_eq!(reference.len(), 4);
    assert_eq!(frozen(&m2), reference);
    assert_eq!(frozen(&m3), reference);
    assert_ne!(std::fs::read(&m2).unwrap(), before);
    assert_eq!(std::fs::read(&f.model).unwrap(), before);

    let out = aqc(&[&"train-stage2", &"-c", &hq, &"-m", &f.model, &"-o", &dir.path().join("x.aqm"), &"--use-stages", &"4"]);
    assert_eq!(code(&out), 2);
    let out = aqc(&[&"train-stage2", &"-c", &hq, &"-m", &m2, &"-o", &m2]);
    assert_eq!(code(&out), 2);
}

fn wide_semantic(model: &CodecModel) -> CodecModel {
    let small = model.semantic();
    let dim = small.dim();
    let k = 8192;
    let mut c = Array2::zeros((k, dim));
    for i in 0..k {
        let base = small.dequantize(i % small.size()).unwrap();
        for j in 0..dim {
            c[[i, j]] = base[j] + 1e-3 * ((i / small.size()) as f64) * (j as f64 + 1.0).sin();
        }
    }
    let config = CodecConfig {
        k_sem: k,
        ..model.config().clone()
    };
    let semantic = SemanticCodebook::new(c, "widened").unwrap();
    let decoders: BTreeMap<_, _> = model.decoders().clone();
    CodecModel::from_parts(config, model.encoder().clone(), semantic, model.quantizer().clone(), decoders).unwrap()
}

#[test]
fn sixty_seconds_at_full_size_is_1000_frames_under_a_kilobit() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("wide.aqm");
    write_model(&model, &wide_semantic(&read_model(&f.model).unwrap())).unwrap();

    let clips: Vec<AudioBuffer> = wav_files(&f.path("corpus")).iter().map(|p| read_wav(p).unwrap()).collect();
    let samples: Vec<f32> = clips.iter().cycle().take(15).flat_map(|c| c.samples().to_vec()).collect();
    assert_eq!(samples.len(), 60 * CODEC_RATE as usize);
    let input = dir.path().join("long.wav");
    write_wav(&input, &AudioBuffer::new(samples, CODEC_RATE).unwrap(), WavFormat::Pcm16).unwrap();

    let stream = dir.path().join("long.aqc");
    let out = ok(aqc(&[&"encode", &"-m", &model, &"-i", &input, &"-o", &stream, &"-s", &"3"]));
    assert!(out.contains("1000 frames"), "{out}");
    assert!(out.contains("0.87 kbps"), "{out}");
    let info = ok(aqc(&[&"inspect", &stream, &"--json"]));
    let v: serde_json::Value = serde_json::from_str(&info).unwrap();
    assert_eq!(v["num_frames"], 1000);
    assert_eq!(v["sem_bits"], 13);
}

#[test]
fn streaming_decode_matches_batch_bytes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = &wav_files(&f.path("corpus"))[0];
    let stream = dir.path().join("a.aqc");
    ok(aqc(&[&"encode", &"-m", &f.model, &"-i", input, &"-o", &stream]));
    for rate in ["16000", "24000"] {
        let (batch, live) = (dir.path().join(format!("b{rate}.wav")), dir.path().join(format!("s{rate}.wav")));
        ok(aqc(&[&"decode", &"-m", &f.model, &"-i", &stream, &"-o", &batch, &"--sample-rate", &rate]));
        ok(aqc(&[&"decode", &"-m", &f.model, &"-i", &stream, &"-o", &live, &"--sample-rate", &rate, &"--streaming"]));
        assert_eq!(std::fs::read(&batch).unwrap(), std::fs::read(&live).unwrap(), "rate {rate}");
    }
}

#[test]
fn malformed_files_exit_with_format_code() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = &wav_files(&f.path("corpus"))[1];
    let stream = dir.path().join("a.aqc");
    ok(aqc(&[&"encode", &"-m", &f.model, &"-i", input, &"-o", &stream]));
    let bytes = std::fs::read(&stream).unwrap();

    let cut = dir.path().join("cut.aqc");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(code(&aqc(&[&"inspect", &cut])), 4);
    assert_eq!(code(&aqc(&[&"decode", &"-m", &f.model, &"-i", &cut, &"-o", &dir.path().join("o.wav")])), 4);

    let stub = dir.path().join("stub.aqm");
    std::fs::write(&stub, b"AQ").unwrap();
    assert_eq!(code(&aqc(&[&"inspect", &stub])), 4);
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a codec file at all").unwrap();
    assert_eq!(code(&aqc(&[&"inspect", &junk])), 4);

    assert_eq!(code(&aqc(&[&"encode", &"-m", &f.model, &"-i", input, &"-o", &stream, &"-s", &"0"])), 2);
    assert_eq!(code(&aqc(&[&"encode", &"-m", &f.model, &"-i", input, &"-o", &dir.path().join("z.aqc"), &"-s", &"4"])), 2);
}

#[test]
fn wrong_rate_input_is_rejected_unless_resampled() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let at8k = dir.path().join("8k.wav");
    let x = read_wav(&wav_files(&f.path("corpus"))[2]).unwrap();
    let down: Vec<f32> = x.samples().iter().step_by(2).copied().collect();
    write_wav(&at8k, &AudioBuffer::new(down, 8000).unwrap(), WavFormat::Pcm16).unwrap();
    let out_path = dir.path().join("a.aqc");
    let out = aqc(&[&"encode", &"-m", &f.model, &"-i", &at8k, &"-o", &out_path]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("resample"));
    ok(aqc(&[&"encode", &"-m", &f.model, &"-i", &at8k, &"-o", &out_path, &"--resample"]));
    assert!(out_path.exists());
}

#[test]
fn cli_pipeline_matches_library_pipeline() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = wav_files(&f.path("corpus"))[3].clone();
    let original = std::fs::read(&input).unwrap();
    let (stream, out) = (dir.path().join("a.aqc"), dir.path().join("a.wav"));
    ok(aqc(&[&"encode", &"-m", &f.model, &"-i", &input, &"-o", &stream, &"-s", &"2"]));
    ok(aqc(&[&"decode", &"-m", &f.model, &"-i", &stream, &"-o", &out, &"--float"]));

    let model = read_model(&f.model).unwrap();
    assert_eq!(model_sections(&model).len(), 5);
    assert_eq!(model.decoders().len(), 3);
    let audio = read_wav(&input).unwrap();
    let frames = model.tokenize(&audio, 2).unwrap();
    let expected = model.decode(&frames, CODEC_RATE).unwrap();
    let got = read_wav(&out).unwrap();
    assert_eq!(got.len(), expected.len());
    for (a, b) in got.samples().iter().zip(expected.samples()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    let report = dir.path().join("eval.json");
    let text = ok(aqc(&[&"eval", &"-m", &f.model, &"-c", &f.path("corpus"), &"-s", &"2", &"--json", &report]));
    assert!(text.contains("STOI") || text.contains("stoi"), "{text}");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(v["stoi"].as_f64().is_some_and(|s| (0.0..=1.0).contains(&s)), "{v}");
    assert_eq!(std::fs::read(&input).unwrap(), original);
}
