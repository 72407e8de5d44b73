use std::path::{Path, PathBuf};

use aqc_core::agrvq::{utilization_report, UtilizationReport, COMBINED_SIZE};
use aqc_core::bitstream::{bitrate_bps, bitrate_kbps, measured_bitrate_bps, read_aqc, unpack, write_aqc, MAGIC};
use aqc_core::codec::MAX_INPUT_SECS;
use aqc_core::container::{load_model, model_sections, read_model, read_sections, write_model, Section, MODEL_MAGIC, TAG_DECODER};
use aqc_core::decoder::samples_per_frame;
use aqc_core::dsp::{read_wav, resample, write_wav, CODEC_RATE};
use aqc_core::synth::{synth_corpus, SpeakerProfile};
use aqc_core::{evaluate_codec, load_corpus, AudioBuffer, CodecModel, Error, Stage1Report, WavFormat};
use serde_json::{json, Value};

use crate::args::{
    DecodeArgs, EncodeArgs, EvalArgs, InspectArgs, RefitArgs, RunConfig, Stage1Args, Stage2Args, Stage3Args, SynthArgs,
};
use crate::{CliError, CliResult, EXIT_FORMAT};

fn load_audio(dirs: &[PathBuf]) -> CliResult<Vec<AudioBuffer>> {
    let entries = load_corpus(dirs, Some(CODEC_RATE))?;
    let secs: f64 = entries.iter().map(|e| e.audio.duration_secs()).sum();
    log::info!("loaded {} files, {secs:.1} s of audio", entries.len());
    Ok(entries.into_iter().map(|e| e.audio).collect())
}

fn write_json(path: &Path, value: &Value) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn utilization_json(u: &UtilizationReport) -> Value {
    u.stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({
                "stage": i + 1,
                "used": s.used_entries(),
                "perplexity": s.perplexity,
                "perplexity_a": s.perplexity_a,
                "perplexity_b": s.perplexity_b,
            })
        })
        .collect()
}

fn print_utilization(u: &UtilizationReport) {
    for (i, s) in u.stages.iter().enumerate() {
        println!(
            "  stage {}: {} / {COMBINED_SIZE} symbols used, perplexity {:.4} (branches {:.3} / {:.3})",
            i + 1,
            s.used_entries(),
            s.perplexity,
            s.perplexity_a,
            s.perplexity_b
        );
    }
}

pub fn synth(a: SynthArgs) -> CliResult {
    if a.speakers == 0 || a.per_speaker == 0 {
        return Err(CliError::usage("--speakers and --per-speaker must be positive"));
    }
    if !(a.seconds >= 0.5 && a.seconds <= MAX_INPUT_SECS as f64) {
        return Err(CliError::usage(format!("--seconds {} outside 0.5..={MAX_INPUT_SECS}", a.seconds)));
    }
    log::info!("resolved config: {a:?}");
    let speakers: Vec<SpeakerProfile> = (0..a.speakers as u64)
        .map(|i| SpeakerProfile::random(a.seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect();
    let corpus = synth_corpus(&speakers, a.per_speaker, a.seconds, a.seed);
    for (i, u) in corpus.iter().enumerate() {
        let dir = a.output.join(format!("spk{:02}", u.speaker));
        std::fs::create_dir_all(&dir)?;
        write_wav(dir.join(format!("utt{:03}.wav", i % a.per_speaker)), &u.audio, WavFormat::Pcm16)?;
    }
    println!(
        "wrote {} utterances ({} speakers x {} x {:.1} s) to {}",
        corpus.len(),
        a.speakers,
        a.per_speaker,
        a.seconds,
        a.output.display()
    );
    Ok(())
}

fn print_stage1(report: &Stage1Report, model: &CodecModel) {
    let cfg = model.config();
    println!("frames: {} ({:.1} s of audio)", report.frames, report.frames as f64 * 0.06);
    println!("encoder: 480 -> {} dims, {:.2}% of variance kept", cfg.latent_dim, 100.0 * report.encoder_variance_kept);
    let hist: Vec<String> = report.distortion_history.iter().map(|d| format!("{d:.3}")).collect();
    println!("semantic k-means distortion per iteration: {}", hist.join(" "));
    println!("semantic codebook: {} / {} entries used ({} bits)", report.semantic_used, cfg.k_sem, model.semantic_bits());
    let res: Vec<String> = report.residual_mse.iter().map(|d| format!("{d:.3}")).collect();
    println!("acoustic residual MSE (input, then after each stage): {}", res.join(" -> "));
    println!("AGRVQ utilization:");
    print_utilization(&report.utilization);
    for (s, mse) in &report.decoder_mse {
        println!("decoder S={s}: training mel MSE {mse:.4}, {:.2} kbps", model.bitrate_kbps(*s));
    }
}

fn stage1_json(report: &Stage1Report) -> Value {
    json!({
        "frames": report.frames,
        "encoder_variance_kept": report.encoder_variance_kept,
        "distortion_history": report.distortion_history,
        "semantic_used": report.semantic_used,
        "residual_mse": report.residual_mse,
        "utilization": utilization_json(&report.utilization),
        "decoder_mse": report.decoder_mse.iter().map(|(s, m)| (s.to_string(), json!(m))).collect::<serde_json::Map<_, _>>(),
    })
}

pub fn train_stage1(a: Stage1Args) -> CliResult {
    let config = a.model.codec_config();
    config.validate()?;
    let run = RunConfig {
        corpus: a.corpus.clone(),
        output: Some(a.output.clone()),
        use_stages: if a.no_decoder { vec![] } else { (1..=config.num_stages).collect() },
        ..RunConfig::from_model("train-stage1", &config)
    };
    run.validate()?;
    run.log();
    let audio = load_audio(&a.corpus)?;
    let (model, report) = CodecModel::train_stage1(&audio, config, !a.no_decoder)?;
    write_model(&a.output, &model)?;
    print_stage1(&report, &model);
    if let Some(p) = &a.report {
        write_json(p, &stage1_json(&report))?;
    }
    println!("wrote {}", a.output.display());
    Ok(())
}

fn frozen_sections(model: &CodecModel) -> Vec<Section> {
    model_sections(model).into_iter().filter(|s| s.tag != TAG_DECODER).collect()
}

fn mean_mr_mel(model: &CodecModel, corpus: &[AudioBuffer], s: usize) -> CliResult<Option<f64>> {
    if !model.decoders().contains_key(&s) {
        return Ok(None);
    }
    Ok(Some(evaluate_codec(model, corpus, s)?.mr_mel))
}

struct Refit {
    model: CodecModel,
    stages: Vec<usize>,
    lambda: f64,
    held_out: Option<Vec<AudioBuffer>>,
}

fn prepare_refit(command: &'static str, r: &RefitArgs, corpus: Vec<PathBuf>) -> CliResult<Refit> {
    let model = read_model(&r.model)?;
    let stages = if r.use_stages.is_empty() {
        (1..=model.num_stages()).collect()
    } else {
        r.use_stages.clone()
    };
    let lambda = r.ridge_lambda.unwrap_or(model.config().ridge_lambda);
    let run = RunConfig {
        corpus,
        model: Some(r.model.clone()),
        output: Some(r.output.clone()),
        use_stages: stages.clone(),
        ridge_lambda: lambda,
        ..RunConfig::from_model(command, model.config())
    };
    run.validate()?;
    run.log();
    let held_out = r.held_out.as_ref().map(|d| load_audio(std::slice::from_ref(d))).transpose()?;
    Ok(Refit {
        model,
        stages,
        lambda,
        held_out,
    })
}

fn scores(model: &CodecModel, corpus: Option<&Vec<AudioBuffer>>, stages: &[usize]) -> CliResult<Vec<Option<f64>>> {
    match corpus {
        Some(c) => stages.iter().map(|&s| mean_mr_mel(model, c, s)).collect(),
        None => Ok(vec![None; stages.len()]),
    }
}

fn print_scores(label: &str, stages: &[usize], before: &[Option<f64>], after: &[Option<f64>]) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    for ((s, b), a) in stages.iter().zip(before).zip(after) {
        if a.is_some() {
            println!("{label} MR-MEL S={s}: before {} after {}", fmt(*b), fmt(*a));
        }
    }
}

fn finish_refit(r: &RefitArgs, frozen: &[Section], model: &CodecModel) -> CliResult {
    if frozen_sections(model) != frozen {
        return Err(CliError::data("internal error: a frozen section changed during refit"));
    }
    write_model(&r.output, model)?;
    println!("encoder, semantic and AGRVQ sections unchanged; wrote {}", r.output.display());
    Ok(())
}

pub fn train_stage2(a: Stage2Args) -> CliResult {
    let Refit {
        mut model,
        stages,
        lambda,
        held_out,
    } = prepare_refit("train-stage2", &a.refit, a.corpus.clone())?;
    let audio = load_audio(&a.corpus)?;
    let frozen = frozen_sections(&model);
    let before = scores(&model, held_out.as_ref(), &stages)?;
    let mse = model.refit_decoder(&audio, &stages, lambda, !a.no_prior)?;
    for (s, m) in &mse {
        println!("decoder S={s}: training mel MSE {m:.4}");
    }
    let after = scores(&model, held_out.as_ref(), &stages)?;
    print_scores("held-out", &stages, &before, &after);
    finish_refit(&a.refit, &frozen, &model)
}

pub fn train_stage3(a: Stage3Args) -> CliResult {
    let Refit {
        mut model,
        stages,
        lambda,
        held_out,
    } = prepare_refit("train-stage3", &a.refit, vec![a.speaker.clone()])?;
    let audio = load_audio(std::slice::from_ref(&a.speaker))?;
    let other = a.other.as_ref().map(|d| load_audio(std::slice::from_ref(d))).transpose()?;
    let frozen = frozen_sections(&model);
    let (before, other_before) = (scores(&model, held_out.as_ref(), &stages)?, scores(&model, other.as_ref(), &stages)?);
    let mse = model.adapt_decoder(&audio, &stages, lambda)?;
    for (s, m) in &mse {
        println!("decoder S={s}: adapted training mel MSE {m:.4}");
    }
    let (after, other_after) = (scores(&model, held_out.as_ref(), &stages)?, scores(&model, other.as_ref(), &stages)?);
    print_scores("target held-out", &stages, &before, &after);
    print_scores("non-target", &stages, &other_before, &other_after);
    finish_refit(&a.refit, &frozen, &model)
}

pub fn encode(a: EncodeArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let s = a.use_stages.unwrap_or(model.num_stages());
    let run = RunConfig {
        model: Some(a.model.clone()),
        input: Some(a.input.clone()),
        output: Some(a.output.clone()),
        use_stages: vec![s],
        ..RunConfig::from_model("encode", model.config())
    };
    run.validate()?;
    run.log();
    let mut audio = read_wav(&a.input)?;
    if audio.sample_rate() != CODEC_RATE {
        if !a.resample {
            return Err(CliError::data(format!(
                "{} is {} Hz but the codec runs at {CODEC_RATE} Hz; resample it first or pass --resample",
                a.input.display(),
                audio.sample_rate()
            )));
        }
        log::info!("resampling {} Hz -> {CODEC_RATE} Hz", audio.sample_rate());
        audio = resample(&audio, CODEC_RATE)?;
    }
    let (frames, slices) = model.tokenize_long(&audio, s)?;
    if slices > 1 {
        println!(
            "notice: input is {:.1} s, longer than {MAX_INPUT_SECS} s; encoded as {slices} consecutive slices",
            audio.duration_secs()
        );
    }
    let dropped = audio.len().saturating_sub(frames.len() * samples_per_frame(CODEC_RATE));
    if dropped > 0 {
        println!("notice: dropped {dropped} trailing samples that do not fill a 60 ms frame");
    }
    let header = model.header(s, frames.len());
    write_aqc(&a.output, &header, &frames)?;
    println!(
        "{} frames ({:.2} s) at S={s}: {:.2} kbps -> {}",
        frames.len(),
        header.duration_secs(),
        bitrate_kbps(&header),
        a.output.display()
    );
    Ok(())
}

fn format_error(message: String) -> CliError {
    CliError {
        code: EXIT_FORMAT,
        message,
    }
}

pub fn decode(a: DecodeArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let (header, frames) = read_aqc(&a.input)?;
    let s = header.num_acoustic as usize;
    let run = RunConfig {
        model: Some(a.model.clone()),
        input: Some(a.input.clone()),
        output: Some(a.output.clone()),
        use_stages: vec![s],
        sample_rate: a.sample_rate,
        streaming: a.streaming,
        ..RunConfig::from_model("decode", model.config())
    };
    if header.sem_bits != model.semantic_bits() {
        return Err(format_error(format!(
            "stream has {}-bit semantic indices but the model's codebook uses {} bits; it was encoded with a different model",
            header.sem_bits,
            model.semantic_bits()
        )));
    }
    if s == 0 || s > model.num_stages() {
        return Err(format_error(format!(
            "stream carries {s} acoustic stages; this model decodes 1..={}",
            model.num_stages()
        )));
    }
    run.validate()?;
    run.log();
    let audio = if a.streaming {
        let mut stream = model.stream(s, a.sample_rate)?;
        let mut samples = Vec::with_capacity(frames.len() * samples_per_frame(a.sample_rate));
        for f in &frames {
            samples.extend(stream.push(f)?.samples);
        }
        samples.extend(stream.flush()?.samples);
        AudioBuffer::new(samples, a.sample_rate)?
    } else {
        model.decode(&frames, a.sample_rate)?
    };
    let format = if a.float { WavFormat::Float32 } else { WavFormat::Pcm16 };
    write_wav(&a.output, &audio, format)?;
    println!(
        "{} frames -> {} samples at {} Hz ({}) -> {}",
        frames.len(),
        audio.len(),
        a.sample_rate,
        if a.streaming { "streaming" } else { "batch" },
        a.output.display()
    );
    Ok(())
}

fn inspect_aqc(bytes: &[u8]) -> CliResult<Value> {
    let (h, frames) = unpack(bytes)?;
    let mut distinct: Vec<u32> = frames.iter().map(|f| f.semantic).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let acoustic: Vec<_> = frames.iter().map(|f| f.acoustic.clone()).collect();
    Ok(json!({
        "kind": "aqc",
        "version": aqc_core::bitstream::VERSION,
        "sample_rate": h.sample_rate,
        "frame_len_us": h.frame_len_us,
        "sem_bits": h.sem_bits,
        "num_acoustic": h.num_acoustic,
        "ac_bits": h.ac_bits,
        "num_frames": h.num_frames,
        "duration_secs": h.duration_secs(),
        "frame_rate_hz": h.frame_rate_hz(),
        "bitrate_bps": bitrate_bps(&h),
        "bitrate_kbps": bitrate_kbps(&h),
        "measured_bps": measured_bitrate_bps(&h),
        "payload_bytes": h.payload_bytes(),
        "semantic_distinct": distinct.len(),
        "utilization": utilization_json(&utilization_report(&acoustic)),
    }))
}

fn inspect_aqm(bytes: &[u8]) -> CliResult<Value> {
    let sections = read_sections(bytes)?;
    let model = load_model(bytes)?;
    let c = model.config();
    let decoders: Vec<Value> = model
        .decoders()
        .iter()
        .map(|(s, w)| {
            json!({
                "use_stages": s,
                "context": w.context(),
                "ridge_lambda": w.ridge_lambda(),
                "rows": w.weights().nrows(),
                "cols": w.weights().ncols(),
                "bitrate_kbps": model.bitrate_kbps(*s),
            })
        })
        .collect();
    Ok(json!({
        "kind": "aqm",
        "version": aqc_core::container::MODEL_VERSION,
        "sections": sections.iter().map(|s| json!({
            "tag": s.tag_str(),
            "bytes": s.payload.len(),
            "crc32": format!("{:08x}", s.crc()),
        })).collect::<Vec<_>>(),
        "config": {
            "k_sem": c.k_sem,
            "num_stages": c.num_stages,
            "latent_dim": c.latent_dim,
            "reduced_dim": c.reduced_dim,
            "kmeans_iters": c.kmeans_iters,
            "ridge_lambda": c.ridge_lambda,
            "gl_iters": c.gl_iters,
            "seed": c.seed,
        },
        "semantic_bits": model.semantic_bits(),
        "trained_on": model.semantic().trained_on,
        "decoders": decoders,
    }))
}

fn print_value(prefix: &str, v: &Value) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                print_value(&key, v);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                print_value(&format!("{prefix}[{i}]"), v);
            }
        }
        Value::String(s) => println!("{prefix} = {s}"),
        other => println!("{prefix} = {other}"),
    }
}

pub fn inspect(a: InspectArgs) -> CliResult {
    log::info!("resolved config: {a:?}");
    let bytes = std::fs::read(&a.file)?;
    let Some(magic) = bytes.get(..4) else {
        return Err(Error::Truncated {
            expected_bits: 32,
            actual_bits: bytes.len() as u64 * 8,
        }
        .into());
    };
    let value = if magic == MAGIC {
        inspect_aqc(&bytes)?
    } else if magic == MODEL_MAGIC {
        inspect_aqm(&bytes)?
    } else {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic.try_into().expect("four bytes"),
        }
        .into());
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
    } else {
        println!("file = {}", a.file.display());
        print_value("", &value);
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let s = a.use_stages.unwrap_or(model.num_stages());
    let run = RunConfig {
        corpus: a.corpus.clone(),
        model: Some(a.model.clone()),
        output: a.json.clone(),
        use_stages: vec![s],
        ..RunConfig::from_model("eval", model.config())
    };
    run.validate()?;
    run.log();
    let audio = load_audio(&a.corpus)?;
    let report = evaluate_codec(&model, &audio, s)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        let value = serde_json::to_value(&report).map_err(|e| CliError::data(e.to_string()))?;
        write_json(p, &value)?;
    }
    Ok(())
}
