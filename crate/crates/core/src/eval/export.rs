use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::model::{AttentionMap, ForwardOptions, ModelParams};
use crate::tensor::Scalar;

/// `x` with `digits` significant digits, `%g` style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= digits as i32 {
        return format!("{}e{exp}", trim(mantissa));
    }
    let (neg, m) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let ds: String = m.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &ds[..split], &ds[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), ds)
    };
    format!("{}{}", if neg { "-" } else { "" }, trim(&body))
}

fn f9(x: f64) -> String {
    fmt_sig(x, 9)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub subject_id: String,
    pub patch_index: usize,
    pub coordinates: Option<[usize; 3]>,
    pub alpha: f64,
}

impl AttentionRow {
    /// One row per patch of `bag`.
    pub fn for_bag<T: Scalar>(bag: &Bag<T>, map: &AttentionMap) -> Result<Vec<Self>> {
        if map.weights.len() != bag.len() {
            return Err(Error::Usage(format!(
                "attention map has {} weights for bag {} of {} patches",
                map.weights.len(),
                bag.subject_id,
                bag.len()
            )));
        }
        Ok(map
            .weights
            .iter()
            .enumerate()
            .map(|(i, &alpha)| AttentionRow {
                subject_id: bag.subject_id.clone(),
                patch_index: map.patch_ids.get(i).copied().unwrap_or(i),
                coordinates: bag.coordinates.as_ref().map(|c| c[i]),
                alpha,
            })
            .collect())
    }
}

pub fn write_attention_csv(w: &mut impl Write, rows: &[AttentionRow]) -> Result<()> {
    writeln!(w, "subject_id,patch_index,d,h,w,alpha")?;
    for r in rows {
        let c = r
            .coordinates
            .map_or_else(|| ",,".to_string(), |[a, b, c]| format!("{a},{b},{c}"));
        writeln!(w, "{},{},{},{}", r.subject_id, r.patch_index, c, f9(r.alpha))?;
    }
    Ok(())
}

/// Writes the attention map of one bag as CSV.
pub fn export_attention<T: Scalar>(bag: &Bag<T>, map: &AttentionMap, path: &Path) -> Result<()> {
    let rows = AttentionRow::for_bag(bag, map)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_attention_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRow {
    pub subject_id: String,
    pub vector: Vec<f64>,
    pub y: f64,
}

pub fn write_subject_csv(w: &mut impl Write, rows: &[SubjectRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.vector.len());
    let cols: Vec<String> = (0..d).map(|k| format!("v{k}")).collect();
    writeln!(w, "subject_id,{},y", cols.join(","))?;
    for r in rows {
        if r.vector.len() != d {
            return Err(Error::Usage("subject vectors differ in width".into()));
        }
        let v: Vec<String> = r.vector.iter().map(|&x| f9(x)).collect();
        writeln!(w, "{},{},{}", r.subject_id, v.join(","), f9(r.y))?;
    }
    Ok(())
}

/// Writes the pooled bag vector of every subject as CSV.
pub fn export_subject_vectors<T: Scalar>(
    bags: &[Bag<T>],
    params: &ModelParams<T>,
    opts: &ForwardOptions,
    path: &Path,
) -> Result<()> {
    let outputs = super::predict_bags(params, bags, opts)?;
    let rows: Vec<SubjectRow> = bags
        .iter()
        .zip(outputs)
        .map(|(b, o)| SubjectRow {
            subject_id: b.subject_id.clone(),
            vector: o.pooled,
            y: b.y,
        })
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_subject_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
