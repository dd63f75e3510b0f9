use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{cdf, Cdf, Channel, ErrorSample};
use crate::error::{Error, Result};
use crate::trackmap::MapErrorStats;

/// CDF levels of the quantile table.
pub const CDF_LEVELS: [f64; 3] = [0.90, 0.99, 1.00];
/// Along-track 3-sigma threshold of the availability table, m.
pub const THRESHOLD_ALONG: f64 = 5.0;
/// Cross-track 3-sigma threshold of the availability table, m.
pub const THRESHOLD_CROSS: f64 = 1.5;

/// Error statistics of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub samples: Vec<ErrorSample>,
    pub availability: f64,
    /// Fraction of available epochs whose true error lies within the
    /// reported 3-sigma, `(along, cross)`.
    pub consistency: (f64, f64),
}

impl EvalReport {
    pub fn new(method: impl Into<String>, samples: Vec<ErrorSample>) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::domain("report needs at least one epoch"));
        }
        let avail: Vec<&ErrorSample> = samples.iter().filter(|s| s.available).collect();
        let frac = |f: &dyn Fn(&ErrorSample) -> bool| {
            if avail.is_empty() {
                f64::NAN
            } else {
                avail.iter().filter(|s| f(s)).count() as f64 / avail.len() as f64
            }
        };
        let consistency = (
            frac(&|s| s.err_along.abs() <= s.sigma3_along),
            frac(&|s| s.err_cross.abs() <= s.sigma3_cross),
        );
        Ok(EvalReport {
            method: method.into(),
            availability: avail.len() as f64 / samples.len() as f64,
            consistency,
            samples,
        })
    }

    pub fn cdf(&self, channel: Channel) -> Cdf {
        cdf(&self.samples, channel)
    }

    pub fn quantile(&self, channel: Channel, p: f64) -> f64 {
        self.cdf(channel).quantile(p)
    }

    fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// Relative reduction of a quantile, percent. `None` unless both values are
/// finite and the baseline is positive.
pub fn improvement(base: f64, new: f64) -> Option<f64> {
    (base.is_finite() && new.is_finite() && base > 0.0).then(|| 100.0 * (1.0 - new / base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub channel: Channel,
    pub level: f64,
    pub base: String,
    pub new: String,
    pub base_value: f64,
    pub new_value: f64,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    /// `(channel, level, value per method)`.
    pub quantiles: Vec<(Channel, f64, Vec<f64>)>,
    /// `(method, CDF at the along threshold, CDF at the cross threshold)`.
    pub thresholds: Vec<(String, f64, f64)>,
    /// Every later method against every earlier one.
    pub improvements: Vec<Improvement>,
}

impl Comparison {
    pub fn quantile(&self, channel: Channel, level: f64, method: &str) -> Option<f64> {
        let m = self.methods.iter().position(|n| n == method)?;
        self.quantiles
            .iter()
            .find(|(c, l, _)| *c == channel && (l - level).abs() < 1e-12)
            .map(|(_, _, v)| v[m])
    }

    pub fn improvement(&self, channel: Channel, level: f64, base: &str, new: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.channel == channel && (i.level - level).abs() < 1e-12 && i.base == base && i.new == new)
            .and_then(|i| i.percent)
    }
}

pub fn compare_methods(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::domain("comparison needs at least two reports"));
    }
    let grid = reports[0].times();
    for r in &reports[1..] {
        if r.times() != grid {
            return Err(Error::domain(format!(
                "report {:?} covers different epochs than {:?}",
                r.method, reports[0].method
            )));
        }
    }
    let channels = [Channel::Along, Channel::Cross, Channel::Max];
    let cdfs: Vec<Vec<Cdf>> = reports.iter().map(|r| channels.iter().map(|&c| r.cdf(c)).collect()).collect();
    let mut quantiles = Vec::new();
    for (ci, &c) in channels.iter().enumerate() {
        for &level in &CDF_LEVELS {
            quantiles.push((c, level, cdfs.iter().map(|per| per[ci].quantile(level)).collect::<Vec<_>>()));
        }
    }
    let thresholds = reports
        .iter()
        .zip(&cdfs)
        .map(|(r, per)| (r.method.clone(), per[0].at(THRESHOLD_ALONG), per[1].at(THRESHOLD_CROSS)))
        .collect();
    let mut improvements = Vec::new();
    for (c, level, values) in &quantiles {
        for i in 0..reports.len() {
            for j in i + 1..reports.len() {
                improvements.push(Improvement {
                    channel: *c,
                    level: *level,
                    base: reports[i].method.clone(),
                    new: reports[j].method.clone(),
                    base_value: values[i],
                    new_value: values[j],
                    percent: improvement(values[i], values[j]),
                });
            }
        }
    }
    Ok(Comparison {
        methods: reports.iter().map(|r| r.method.clone()).collect(),
        quantiles,
        thresholds,
        improvements,
    })
}

fn num(v: f64, digits: usize) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.digits$}")
    }
}

/// Quantiles of the along and cross-track 3-sigma per method and CDF level.
pub fn table1_csv(c: &Comparison) -> String {
    let mut out = format!("channel,cdf,{}\n", c.methods.join(","));
    for (ch, level, values) in c.quantiles.iter().filter(|(ch, _, _)| *ch != Channel::Max) {
        let cells: Vec<String> = values.iter().map(|v| num(*v, 2)).collect();
        let _ = writeln!(out, "{},{level:.2},{}", ch.label(), cells.join(","));
    }
    out
}

/// Fraction of epochs within the along and cross-track thresholds.
pub fn table2_csv(c: &Comparison) -> String {
    let mut out = format!("method,AT_within_{THRESHOLD_ALONG}m,CT_within_{THRESHOLD_CROSS}m\n");
    for (m, at, ct) in &c.thresholds {
        let _ = writeln!(out, "{m},{},{}", num(*at, 4), num(*ct, 4));
    }
    out
}

pub fn improvements_csv(c: &Comparison) -> String {
    let mut out = String::from("channel,cdf,base,new,base_value,new_value,improvement_pct\n");
    for i in &c.improvements {
        let _ = writeln!(
            out,
            "{},{:.2},{},{},{},{},{}",
            i.channel.label(),
            i.level,
            i.base,
            i.new,
            num(i.base_value, 2),
            num(i.new_value, 2),
            i.percent.map_or("nan".into(), |p| num(p, 1))
        );
    }
    out
}

/// Map error statistics: mean and quantiles.
pub fn table4_csv(stats: &MapErrorStats) -> String {
    let mut out = format!("statistic,value_m\nmean,{}\n", num(stats.mean, 3));
    for (p, v) in &stats.quantiles {
        let _ = writeln!(out, "cdf_{p:.2},{}", num(*v, 3));
    }
    out
}
