use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use beamsense::codec::{self, FrameDump};
use beamsense::learner::{
    self, evaluate, famres_train, train_supervised, Evaluation, MetricsReport, ModelParams, ModelSpec, TrainConfig,
};
use beamsense::pipeline::{
    self, build_dataset, Dataset, DatasetManifest, DatasetOptions, Selection, SessionInput, Split,
};
use beamsense::sim::{self, Scenario, SessionManifest, SyntheticSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{read_input, CliError, EXIT_CONFIG};
use crate::{
    AdaptArgs, DatasetArgs, DecodeArgs, EncodeArgs, EvalArgs, ScenarioArgs, SelftestArgs, SimulateArgs, TrainArgs,
};

const RECORD_FILE: &str = "session.bfi";
const SESSION_FILE: &str = "manifest.json";
const DATASET_FILE: &str = "dataset.json";
const STORE_FILE: &str = "tensors.bst";

fn input(path: &Path) -> Result<Vec<u8>, CliError> {
    read_input(path, "input_not_found", EXIT_CONFIG)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config("config_invalid", format!("--{name} must be positive, got {v}")))
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CliError::config("config_invalid", format!("--alpha must lie in (0, 1], got {alpha}")))
    }
}

pub fn scenario(a: &ScenarioArgs) -> Result<Value, CliError> {
    check_positive("duration", a.duration)?;
    check_positive("rate", a.rate)?;
    let sc = sim::synthetic_scenario(&SyntheticSpec {
        classes: a.classes as usize,
        environment: a.env,
        seed: a.seed,
        k: usize::from(a.k),
        duration_s: a.duration,
        rate_hz: a.rate,
        jitter: a.jitter,
        noise_std: a.noise,
    });
    sc.validate()?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    write_json(&a.out, &sc)?;
    Ok(json!({ "scenario": a.out, "env_id": sc.environment.env_id, "session_duration_s": sc.session_duration() }))
}

pub fn simulate(a: &SimulateArgs) -> Result<Value, CliError> {
    let bytes = read_input(&a.scenario, "config_not_found", EXIT_CONFIG)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::config("config_invalid", e.to_string()))?;
    let mut scenario = Scenario::from_json(&text)?;
    if let Some(seed) = a.seed {
        scenario.config.rng_seed = seed;
    }
    scenario.validate()?;
    out_dir(&a.out)?;
    let record = a.out.join(RECORD_FILE);
    let mut sink = BufWriter::new(File::create(&record)?);
    let manifest = sim::gen_session(&scenario, &mut sink)?;
    sink.flush()?;
    let manifest_path = a.out.join(SESSION_FILE);
    write_json(&manifest_path, &manifest)?;
    Ok(json!({
        "record": record,
        "manifest": manifest_path,
        "users": manifest.users,
        "frames": manifest.frames_per_user.iter().sum::<usize>(),
        "frames_per_user": manifest.frames_per_user,
        "duration_s": manifest.duration_s,
    }))
}

pub fn selftest(a: &SelftestArgs) -> Result<Value, CliError> {
    let report = codec::selftest(a.cases, a.seed)?;
    let value = serde_json::to_value(&report)?;
    if report.passed {
        Ok(value)
    } else {
        Err(CliError::numeric(value.to_string()))
    }
}

pub fn decode(a: &DecodeArgs) -> Result<Value, CliError> {
    let frames = codec::decode_records(&input(&a.records)?)?;
    let dumps = frames.iter().map(codec::dump_frame).collect::<Result<Vec<_>, _>>()?;
    write_json(&a.out, &dumps)?;
    Ok(json!({ "frames": dumps.len(), "out": a.out }))
}

pub fn encode(a: &EncodeArgs) -> Result<Value, CliError> {
    let dumps: Vec<FrameDump> = serde_json::from_slice(&input(&a.input)?)?;
    let frames = dumps.iter().map(codec::frame_from_dump).collect::<Result<Vec<_>, _>>()?;
    fs::write(&a.out, codec::encode_records(&frames)?)?;
    Ok(json!({ "frames": frames.len(), "out": a.out }))
}

fn fractions(splits: &[f64]) -> Result<[f64; 3], CliError> {
    <[f64; 3]>::try_from(splits)
        .map_err(|_| CliError::config("config_invalid", format!("--splits needs three fractions, got {}", splits.len())))
}

pub fn dataset(a: &DatasetArgs) -> Result<Value, CliError> {
    check_positive("window-w", a.window_w)?;
    let fractions = fractions(&a.splits)?;
    let mut loaded = Vec::new();
    for path in &a.records {
        let frames = codec::decode_records(&input(path)?)?;
        let manifest: SessionManifest = serde_json::from_slice(&input(&path.with_file_name(SESSION_FILE))?)?;
        loaded.push((path.display().to_string(), frames, manifest));
    }
    let sessions: Vec<SessionInput<'_>> = loaded
        .iter()
        .map(|(name, frames, m)| SessionInput {
            name: name.clone(),
            frames,
            users: m.users,
            duration_s: m.duration_s,
            spans: &m.spans,
        })
        .collect();
    let opts = DatasetOptions {
        window_s: a.window_w,
        selection: Selection { subchannels: a.subchannels, angles: a.angles.clone(), stations: a.stations.clone() },
        fractions,
        seed: a.seed,
        fixed_s: a.s,
    };
    let ds = build_dataset(&sessions, &opts)?;
    out_dir(&a.out)?;
    let manifest_path = a.out.join(DATASET_FILE);
    write_json(&manifest_path, &ds.manifest)?;
    let mut store = BufWriter::new(File::create(a.out.join(STORE_FILE))?);
    pipeline::write_tensor_store(&mut store, ds.manifest.shape, &ds.tensors)?;
    store.flush()?;
    let m = &ds.manifest;
    Ok(json!({
        "manifest": manifest_path,
        "samples": m.samples.len(),
        "shape": m.shape,
        "elements_per_sample": m.shape.len(),
        "classes": m.classes,
        "train": m.count(Split::Train),
        "val": m.count(Split::Val),
        "test": m.count(Split::Test),
    }))
}

fn load_dataset(manifest_path: &Path) -> Result<Dataset, CliError> {
    let manifest: DatasetManifest = serde_json::from_slice(&input(manifest_path)?)?;
    let store = manifest_path.with_file_name(STORE_FILE);
    let (shape, tensors) = pipeline::read_tensor_store(input(&store)?.as_slice())?;
    if shape != manifest.shape || tensors.len() != manifest.samples.len() {
        return Err(CliError::data("data_invalid", "tensor store does not match its manifest"));
    }
    Ok(Dataset { manifest, tensors })
}

fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ModelParams), CliError> {
    Ok(learner::decode_checkpoint(&input(path)?)?)
}

fn check_compatible(spec: &ModelSpec, ds: &Dataset) -> Result<(), CliError> {
    if spec.input != ds.manifest.shape.into() || spec.classes < ds.manifest.classes {
        return Err(CliError::data(
            "checkpoint_mismatch",
            format!("checkpoint expects {:?} with {} classes", spec.input, spec.classes),
        ));
    }
    Ok(())
}

fn spec_for(ds: &Dataset, alpha: f64) -> Result<ModelSpec, CliError> {
    check_alpha(alpha)?;
    Ok(ModelSpec::new(ds.manifest.shape.into(), ds.manifest.classes.max(2), alpha)?)
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<PathBuf, CliError> {
    let path = dir.join("report.json");
    write_json(&path, report)?;
    fs::write(dir.join("confusion.csv"), report.confusion_csv())?;
    Ok(path)
}

fn write_model(path: &Path, spec: &ModelSpec, params: &ModelParams) -> Result<(), CliError> {
    fs::write(path, learner::encode_checkpoint(spec, params)?)?;
    Ok(())
}

fn summary(report: &MetricsReport, checkpoint: Option<&Path>, report_path: &Path) -> Value {
    json!({
        "accuracy": report.accuracy,
        "samples": report.samples,
        "checkpoint": checkpoint,
        "report": report_path,
    })
}

pub fn train(a: &TrainArgs) -> Result<Value, CliError> {
    check_positive("lr", a.lr)?;
    let ds = load_dataset(&a.manifest)?;
    let spec = spec_for(&ds, a.alpha)?;
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let cfg = TrainConfig { lr: a.lr, batch: a.batch as usize, seed: a.seed, ..TrainConfig::default() };
    let init = ModelParams::init(&spec, a.seed);
    let (params, curve) = train_supervised(&spec, &init, &train, &val, a.epochs, &cfg)?;
    let scored = if val.is_empty() { &train } else { &val };
    let eval = evaluate(&spec, &params, scored)?;
    out_dir(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    write_model(&ckpt, &spec, &params)?;
    let report = MetricsReport::new(&eval, curve, json!({ "command": "train", "args": a, "spec": spec }));
    let path = write_report(&a.out, &report)?;
    Ok(summary(&report, Some(&ckpt), &path))
}

pub fn adapt(a: &AdaptArgs) -> Result<Value, CliError> {
    check_positive("lr", a.lr)?;
    if !(a.beta > 0.0 && a.beta <= 1.0) {
        return Err(CliError::config("config_invalid", format!("--beta must lie in (0, 1], got {}", a.beta)));
    }
    if !(a.delta >= 0.0) {
        return Err(CliError::config("config_invalid", format!("--delta must be non-negative, got {}", a.delta)));
    }
    let ds = load_dataset(&a.manifest)?;
    let (spec, init) = match &a.checkpoint {
        Some(path) => {
            let (spec, params) = load_checkpoint(path)?;
            check_compatible(&spec, &ds)?;
            (spec, params)
        }
        None => {
            let spec = spec_for(&ds, a.alpha)?;
            let params = ModelParams::init(&spec, a.seed);
            (spec, params)
        }
    };
    let (micro, rest) = ds.first_seconds(a.delta);
    if micro.is_empty() {
        return Err(CliError::data("empty_micro_dataset", format!("no samples within the first {} s", a.delta)));
    }
    let cfg = TrainConfig {
        lr: a.lr,
        beta: a.beta,
        batch: a.batch as usize,
        meta_k: a.meta_k,
        meta_iterations: a.meta_iterations,
        micro_epochs: a.epochs,
        seed: a.seed,
    };
    let (params, curve) = famres_train(&spec, &init, &micro, &cfg)?;
    let scored = if rest.is_empty() { &micro } else { &rest };
    let eval = evaluate(&spec, &params, scored)?;
    out_dir(&a.out)?;
    let ckpt = a.out.join("adapted.ckpt");
    write_model(&ckpt, &spec, &params)?;
    let report = MetricsReport::new(
        &eval,
        curve,
        json!({ "command": "adapt", "args": a, "spec": spec, "micro_samples": micro.len() }),
    );
    let path = write_report(&a.out, &report)?;
    Ok(summary(&report, Some(&ckpt), &path))
}

pub fn eval(a: &EvalArgs) -> Result<Value, CliError> {
    let ds = load_dataset(&a.manifest)?;
    let (spec, params) = load_checkpoint(&a.checkpoint)?;
    check_compatible(&spec, &ds)?;
    let samples = match a.split.as_str() {
        "train" => ds.split(Split::Train),
        "val" => ds.split(Split::Val),
        "test" => ds.split(Split::Test),
        "all" => ds.tensors.iter().collect(),
        other => return Err(CliError::config("config_invalid", format!("unknown split {other}"))),
    };
    if samples.is_empty() {
        return Err(CliError::data("data_invalid", format!("split {} is empty", a.split)));
    }
    let eval: Evaluation = evaluate(&spec, &params, &samples)?;
    out_dir(&a.out)?;
    let report = MetricsReport::new(&eval, Vec::new(), json!({ "command": "eval", "args": a, "spec": spec }));
    let path = write_report(&a.out, &report)?;
    Ok(summary(&report, None, &path))
}
