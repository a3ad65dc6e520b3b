//! Operation ablation and per-operation feature histograms.

use std::fmt::Write as _;

use super::data::PatchSet;
use super::train::evaluate;
use crate::error::{Error, Result};
use crate::owan::MicroOwanNet;

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `None` for the baseline row.
    pub zeroed: Option<usize>,
    pub label: String,
    pub psnr: f64,
    /// PSNR minus the distorted-input PSNR.
    pub relative_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub distorted_psnr: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn baseline(&self) -> &AblationRow {
        &self.rows[0]
    }

    pub fn ablations(&self) -> &[AblationRow] {
        &self.rows[1..]
    }

    /// Largest minus smallest relative PSNR among the ablated rows.
    pub fn spread(&self) -> f64 {
        let vals = self.ablations().iter().map(|r| r.relative_psnr);
        let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.fold(f64::INFINITY, f64::min);
        if max.is_finite() {
            max - min
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("zeroed,op,psnr,relative_psnr\n");
        for r in &self.rows {
            let idx = r.zeroed.map_or_else(|| "none".to_string(), |k| k.to_string());
            writeln!(s, "{idx},{},{:.6},{:.6}", r.label, r.psnr, r.relative_psnr).unwrap();
        }
        s
    }
}

/// Closes each operation in turn (in every block) and records the test-set PSNR
/// relative to the distorted images. Row 0 is the unmodified net.
pub fn ablation_study(net: &MicroOwanNet, testset: &PatchSet) -> Result<AblationTable> {
    let base = evaluate(net, testset, None)?;
    let mut rows = vec![AblationRow {
        zeroed: None,
        label: "baseline".into(),
        psnr: base.psnr,
        relative_psnr: base.psnr - base.distorted_psnr,
    }];
    let labels: Vec<String> = match net.blocks().first() {
        Some(b) => b.op_kinds().iter().map(|k| k.name().to_string()).collect(),
        None => Vec::new(),
    };
    for (k, label) in labels.into_iter().enumerate() {
        let e = evaluate(net, testset, Some(k))?;
        rows.push(AblationRow {
            zeroed: Some(k),
            label,
            psnr: e.psnr,
            relative_psnr: e.psnr - base.distorted_psnr,
        });
    }
    Ok(AblationTable {
        distorted_psnr: base.distorted_psnr,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHistogram {
    pub block: usize,
    pub lo: f64,
    pub hi: f64,
    pub labels: Vec<String>,
    /// `counts[op][bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Observed `(min, max)` per operation.
    pub extents: Vec<(f64, f64)>,
}

impl FeatureHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / HISTOGRAM_BINS as f64
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let t = ((v - self.lo) / self.bin_width()).floor();
        (t.max(0.0) as usize).min(HISTOGRAM_BINS - 1)
    }

    /// Widest over narrowest per-operation value range (infinite if some op is constant).
    pub fn range_ratio(&self) -> f64 {
        let widths: Vec<f64> = self.extents.iter().map(|(a, b)| b - a).collect();
        let max = widths.iter().cloned().fold(0.0, f64::max);
        let min = widths.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else if max > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,lo,hi");
        for l in &self.labels {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
        let w = self.bin_width();
        for bin in 0..HISTOGRAM_BINS {
            let lo = self.lo + w * bin as f64;
            write!(s, "{bin},{lo:.6},{:.6}", lo + w).unwrap();
            for c in &self.counts {
                write!(s, ",{}", c[bin]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Histograms of each operation's output values in `block` over the test set,
/// binned on one range shared by all operations.
pub fn feature_histogram(net: &MicroOwanNet, testset: &PatchSet, block: usize) -> Result<FeatureHistogram> {
    let b = net
        .blocks()
        .get(block)
        .ok_or_else(|| Error::invalid(format!("block {block} does not exist ({} blocks)", net.blocks().len())))?;
    let n_ops = b.ops().len();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_ops];
    for p in &testset.patches {
        let (_, cache) = net.forward(&p.distorted, None)?;
        let bc = cache.block(block);
        for (k, vals) in values.iter_mut().enumerate() {
            vals.extend_from_slice(bc.op_output(k, p.distorted.height(), p.distorted.width()).data());
        }
    }
    let extents: Vec<(f64, f64)> = values
        .iter()
        .map(|v| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
        })
        .collect();
    let mut lo = extents.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let mut hi = extents.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 0.0;
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let mut hist = FeatureHistogram {
        block,
        lo,
        hi,
        labels: b.op_kinds().iter().map(|k| k.name().to_string()).collect(),
        counts: vec![vec![0; HISTOGRAM_BINS]; n_ops],
        extents,
    };
    for (k, vals) in values.iter().enumerate() {
        for &v in vals {
            let bin = hist.bin_of(v);
            hist.counts[k][bin] += 1;
        }
    }
    Ok(hist)
}
