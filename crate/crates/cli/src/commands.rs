use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use setvec_core::data::{load_bags, make_bags, phantom_bags, save_bags, Bag, DigitDataset, Split};
use setvec_core::eval::{
    attention_roc, bags_r_squared, fmt_sig, latent_spectrum, mean_attention_std, ordinal_accuracy,
    predict_bags, stack_latents, write_attention_csv, write_subject_csv, AttentionRow, SubjectRow,
};
use setvec_core::model::BagOutput;
use setvec_core::rng::derive_seed;
use setvec_core::train::{
    load_checkpoint, save_checkpoint, split_validation, MetricsRecord, Trainer,
};
use setvec_core::{DType, Error, Result, Scalar};

use crate::config::{DataKind, EvalSplit, RunConfig};

pub const RESOLVED: &str = "config.resolved.json";
pub const METRICS: &str = "metrics.ndjson";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SUMMARY: &str = "summary.json";
pub const ATTENTION: &str = "attention.csv";
pub const SUBJECTS: &str = "subjects.csv";
pub const SPECTRUM: &str = "spectrum.json";
pub const ABLATION: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Rewrites every float in `v` with nine significant digits.
fn sig9(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let s = fmt_sig(n.as_f64().expect("f64"), 9);
            serde_json::from_str(&s).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sig9).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, sig9(v))).collect()),
        other => other,
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let v = sig9(serde_json::to_value(v)?);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(out.join(RESOLVED), text)?;
    Ok(())
}

fn split_dir(cfg: &RunConfig, out: &Path, split: EvalSplit) -> PathBuf {
    cfg.dataset_dir(out).join(split.dir_name())
}

fn load_split<T: Scalar>(cfg: &RunConfig, out: &Path, split: EvalSplit) -> Result<Vec<Bag<T>>> {
    let bags = load_bags::<T>(&split_dir(cfg, out, split))?;
    let want = &cfg.train.arch.patch_shape;
    if let Some(b) = bags.iter().find(|b| b.patch_shape() != want.as_slice()) {
        return Err(Error::Format(format!(
            "bag {} has patches of shape {:?} but the architecture expects {:?}",
            b.subject_id,
            b.patch_shape(),
            want
        )));
    }
    Ok(bags)
}

fn stats(bags: &[Bag<impl Scalar>]) -> Value {
    let sizes: Vec<usize> = bags.iter().map(Bag::len).collect();
    let ys: Vec<f64> = bags.iter().map(|b| b.y).collect();
    let (lo, hi) = (*sizes.iter().min().unwrap_or(&0), *sizes.iter().max().unwrap_or(&0));
    let bins = 5usize;
    let width = ((hi - lo) / bins + 1).max(1);
    let mut hist = vec![0usize; bins];
    for s in &sizes {
        hist[((s - lo) / width).min(bins - 1)] += 1;
    }
    let mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len().max(1) as f64).sqrt();
    json!({
        "bags": bags.len(),
        "patches": sizes.iter().sum::<usize>(),
        "size_min": lo,
        "size_max": hi,
        "size_histogram": (0..bins).map(|i| json!({"from": lo + i * width, "count": hist[i]})).collect::<Vec<_>>(),
        "y_mean": mean,
        "y_sd": sd,
        "y_min": ys.iter().copied().fold(f64::INFINITY, f64::min),
        "y_max": ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Value> {
    match cfg.train.dtype {
        DType::F32 => gen_data_t::<f32>(cfg, out),
        DType::F64 => gen_data_t::<f64>(cfg, out),
    }
}

fn gen_data_t<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let d = &cfg.data;
    let train_seed = derive_seed(cfg.seed, "data/train");
    let test_seed = derive_seed(cfg.seed, "data/test");
    let (train, test): (Vec<Bag<T>>, Vec<Bag<T>>) = match d.kind {
        DataKind::Digits => {
            let tr = DigitDataset::load(&d.mnist_dir, Split::Train)?;
            let te = DigitDataset::load(&d.mnist_dir, Split::Test)?;
            (
                make_bags(&tr, train_seed, d.n_train, d.min_size, d.max_size)?,
                make_bags(&te, test_seed, d.n_test, d.min_size, d.max_size)?,
            )
        }
        DataKind::Phantom => (
            phantom_bags(train_seed, d.n_train, &d.phantom)?,
            phantom_bags(test_seed, d.n_test, &d.phantom)?,
        ),
    };
    let root = cfg.dataset_dir(out);
    save_bags(&root.join("train"), &train)?;
    save_bags(&root.join("test"), &test)?;
    write_resolved(out, cfg)?;
    Ok(json!({"train": stats(&train), "test": stats(&test)}))
}

pub fn train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Value> {
    match cfg.train.dtype {
        DType::F32 => train_t::<f32>(cfg, out, resume),
        DType::F64 => train_t::<f64>(cfg, out, resume),
    }
}

/// Trains into `out`, writing the checkpoint after every epoch so a numeric
/// abort leaves the last good state on disk.
pub fn train_into<T: Scalar>(
    cfg: &RunConfig,
    out: &Path,
    resume: bool,
    bags: &[Bag<T>],
) -> Result<(Trainer<T>, Vec<MetricsRecord>)> {
    fs::create_dir_all(out)?;
    let ck_path = out.join(CHECKPOINT);
    let (train_set, val_set) = if cfg.train.val_fraction > 0.0 {
        split_validation(bags, cfg.train.val_fraction, cfg.seed)
    } else {
        (bags.to_vec(), Vec::new())
    };
    let mut trainer = if resume && ck_path.exists() {
        let ck = load_checkpoint::<T>(&ck_path)?;
        ck.check_arch(&cfg.train.arch)?;
        let mut t = Trainer::from_checkpoint(ck)?;
        t.cfg.epochs = cfg.train.epochs;
        t
    } else {
        Trainer::new(cfg.train.clone(), &train_set)?
    };
    write_resolved(out, cfg)?;
    let metrics_path = out.join(METRICS);
    let mut log = BufWriter::new(if resume && ck_path.exists() {
        fs::OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    });
    let val = (!val_set.is_empty()).then_some(val_set.as_slice());
    let records = trainer.fit(&train_set, val, |t, rec| {
        save_checkpoint(&t.checkpoint(), &ck_path)?;
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
        log.flush()?;
        eprintln!(
            "epoch {:>3}  total {:.6}  L_d {:.6}  L_g {:.6}  R {:.4}{}",
            rec.epoch,
            rec.total,
            rec.l_d,
            rec.l_g,
            rec.r,
            rec.val_r2.map(|r| format!("  val_r2 {r:.4}")).unwrap_or_default()
        );
        Ok(())
    })?;
    if !ck_path.exists() {
        save_checkpoint(&trainer.checkpoint(), &ck_path)?;
    }
    Ok((trainer, records))
}

fn train_t<T: Scalar>(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Value> {
    let bags = load_split::<T>(cfg, out, EvalSplit::Train)?;
    let (t, records) = train_into(cfg, out, resume, &bags)?;
    Ok(json!({
        "epochs": t.epoch,
        "steps": t.step,
        "final": records.last(),
    }))
}

struct Evaluated<T: Scalar> {
    bags: Vec<Bag<T>>,
    outputs: Vec<BagOutput<T>>,
}

fn evaluate<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Evaluated<T>> {
    let ck = load_checkpoint::<T>(&out.join(CHECKPOINT))?;
    ck.check_arch(&cfg.train.arch)?;
    let bags = load_split::<T>(cfg, out, cfg.eval.split)?;
    let outputs = predict_bags(&ck.params, &bags, &ck.cfg.eval_options())?;
    Ok(Evaluated { bags, outputs })
}

macro_rules! by_dtype {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.train.dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<Value> {
    by_dtype!(cfg, eval_t(cfg, out))
}

fn summary<T: Scalar>(e: &Evaluated<T>) -> Result<Value> {
    let r2 = bags_r_squared(&e.outputs, &e.bags)?;
    let y: Vec<i64> = e.bags.iter().map(|b| b.y.round() as i64).collect();
    let yhat: Vec<i64> = e.outputs.iter().map(|o| o.prediction.round() as i64).collect();
    let maps: Vec<_> = e.outputs.iter().map(|o| o.attention.clone()).collect();
    let (mean_auc, skipped) = if e.bags.iter().all(|b| b.relevance.is_some()) {
        match attention_roc(&e.bags, &maps) {
            Ok(r) => (Some(r.mean_auc), r.skipped),
            Err(Error::Domain(_)) => (None, e.bags.len()),
            Err(err) => return Err(err),
        }
    } else {
        (None, e.bags.len())
    };
    let spec = latent_spectrum(&stack_latents(&e.outputs)?)?;
    Ok(json!({
        "bags": e.bags.len(),
        "r2": r2,
        "mean_auc": mean_auc,
        "auc_skipped": skipped,
        "exact_acc": ordinal_accuracy(&y, &yhat, 0)?,
        "one_off_acc": ordinal_accuracy(&y, &yhat, 1)?,
        "effective_rank": spec.effective_rank,
        "threshold_rank": spec.threshold_rank,
        "attention_std": mean_attention_std(&maps),
        "sigma": spec.singular_values,
    }))
}

fn eval_t<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let e = evaluate::<T>(cfg, out)?;
    let s = summary(&e)?;
    write_json(&out.join(SUMMARY), &s)?;
    Ok(s)
}

pub fn attn_export(cfg: &RunConfig, out: &Path) -> Result<Value> {
    by_dtype!(cfg, attn_export_t(cfg, out))
}

fn attn_export_t<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let e = evaluate::<T>(cfg, out)?;
    let mut rows = Vec::new();
    for (b, o) in e.bags.iter().zip(&e.outputs) {
        rows.extend(AttentionRow::for_bag(b, &o.attention)?);
    }
    let mut w = BufWriter::new(File::create(out.join(ATTENTION))?);
    write_attention_csv(&mut w, &rows)?;
    w.flush()?;
    let subjects: Vec<SubjectRow> = e
        .bags
        .iter()
        .zip(&e.outputs)
        .map(|(b, o)| SubjectRow {
            subject_id: b.subject_id.clone(),
            vector: o.pooled.clone(),
            y: b.y,
        })
        .collect();
    let mut w = BufWriter::new(File::create(out.join(SUBJECTS))?);
    write_subject_csv(&mut w, &subjects)?;
    w.flush()?;
    Ok(json!({"attention_rows": rows.len(), "subjects": subjects.len()}))
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<Value> {
    by_dtype!(cfg, spectrum_t(cfg, out))
}

fn spectrum_t<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let e = evaluate::<T>(cfg, out)?;
    let spec = latent_spectrum(&stack_latents(&e.outputs)?)?;
    let v = json!({
        "effective_rank": spec.effective_rank,
        "threshold_rank": spec.threshold_rank,
        "top_share": spec.top_share(),
        "sigma": spec.singular_values,
        "explained_variance": spec.explained_variance,
    });
    write_json(&out.join(SPECTRUM), &v)?;
    Ok(json!({"effective_rank": spec.effective_rank, "top_share": spec.top_share()}))
}

#[derive(Serialize)]
struct AblationRow {
    lambda1: f64,
    r2: f64,
    effective_rank: f64,
    attention_std: f64,
}

pub fn ablate_lambda1(cfg: &RunConfig, out: &Path, lambdas: Option<Vec<f64>>) -> Result<Value> {
    by_dtype!(cfg, ablate_t(cfg, out, lambdas))
}

fn ablate_t<T: Scalar>(cfg: &RunConfig, out: &Path, lambdas: Option<Vec<f64>>) -> Result<Value> {
    let mut list = lambdas.unwrap_or_else(|| cfg.ablation.lambda1.clone());
    if list.is_empty() {
        return Err(Error::Usage("the λ1 list is empty".into()));
    }
    if let Some(bad) = list.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Usage(format!("λ1 values must be non-negative, got {bad}")));
    }
    list.sort_by(f64::total_cmp);
    list.dedup();
    let train_bags = load_split::<T>(cfg, out, EvalSplit::Train)?;
    let test_bags = load_split::<T>(cfg, out, cfg.eval.split)?;
    write_resolved(out, cfg)?;
    let mut rows = Vec::new();
    for &l1 in &list {
        let mut sub = cfg.clone();
        sub.train.lambda1 = l1;
        sub.data.dataset_dir = Some(cfg.dataset_dir(out));
        let dir = out.join(format!("lambda1-{}", fmt_sig(l1, 9)));
        let ck_path = dir.join(CHECKPOINT);
        // reuse a finished run trained with the same configuration
        let params = match load_checkpoint::<T>(&ck_path) {
            Ok(ck) if ck.cfg == sub.train && ck.epoch >= sub.train.epochs => ck.params,
            _ => train_into(&sub, &dir, false, &train_bags)?.0.params,
        };
        let outputs = predict_bags(&params, &test_bags, &sub.train.eval_options())?;
        let maps: Vec<_> = outputs.iter().map(|o| o.attention.clone()).collect();
        rows.push(AblationRow {
            lambda1: l1,
            r2: bags_r_squared(&outputs, &test_bags)?,
            effective_rank: latent_spectrum(&stack_latents(&outputs)?)?.effective_rank,
            attention_std: mean_attention_std(&maps),
        });
    }
    write_json(&out.join(ABLATION), &rows)?;
    let mut w = BufWriter::new(File::create(out.join(ABLATION_CSV))?);
    writeln!(w, "lambda1,r2,effective_rank,attention_std")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_sig(r.lambda1, 9),
            fmt_sig(r.r2, 9),
            fmt_sig(r.effective_rank, 9),
            fmt_sig(r.attention_std, 9)
        )?;
    }
    w.flush()?;
    Ok(sig9(serde_json::to_value(&rows)?))
}
