use std::fmt::Write as _;

use crate::data::sequence::SequenceSample;
use crate::error::{Error, Result};

/// Per-domain crowd and motion statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStats {
    /// Number of sequences.
    pub nos: usize,
    /// Number of pedestrians summed over sequences.
    pub nop: usize,
    /// Average pedestrians per sequence.
    pub an: f64,
    /// Average speed, m/s.
    pub av: f64,
    /// Average acceleration magnitude, m/s².
    pub aa: f64,
}

pub fn compute_domain_stats(
    samples: &[SequenceSample],
    frame_interval: f64,
) -> Result<DomainStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDomain("no sequences to summarize".into()));
    }
    let nos = samples.len();
    let nop: usize = samples.iter().map(SequenceSample::num_peds).sum();
    let (mut speed_sum, mut speed_n) = (0.0, 0usize);
    let (mut acc_sum, mut acc_n) = (0.0, 0usize);
    for s in samples {
        for track in &s.absolute {
            let velocities: Vec<[f64; 2]> = track
                .windows(2)
                .map(|w| {
                    [
                        (w[1][0] - w[0][0]) / frame_interval,
                        (w[1][1] - w[0][1]) / frame_interval,
                    ]
                })
                .collect();
            for v in &velocities {
                speed_sum += v[0].hypot(v[1]);
                speed_n += 1;
            }
            for w in velocities.windows(2) {
                acc_sum += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) / frame_interval;
                acc_n += 1;
            }
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(DomainStats {
        nos,
        nop,
        an: nop as f64 / nos as f64,
        av: mean(speed_sum, speed_n),
        aa: mean(acc_sum, acc_n),
    })
}

/// Extreme deviation (max − min) and sample standard deviation of one
/// statistic across domains.
pub fn aggregate_cross_domain(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Contract(format!(
            "cross-domain aggregation needs at least 2 domains, got {}",
            values.len()
        )));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((max - min, var.sqrt()))
}

/// Renders the stats CSV: one row per domain, then a `metric,ED,SD` block
/// when at least two domains are present.
pub fn stats_csv(rows: &[(String, DomainStats)]) -> Result<String> {
    let mut out = String::from("domain,NoS,NoP,AN,AV,AA\n");
    for (name, s) in rows {
        writeln!(
            out,
            "{name},{},{},{:.6},{:.6},{:.6}",
            s.nos, s.nop, s.an, s.av, s.aa
        )
        .expect("write to string");
    }
    if rows.len() >= 2 {
        out.push_str("metric,ED,SD\n");
        let columns: [(&str, fn(&DomainStats) -> f64); 5] = [
            ("NoS", |s| s.nos as f64),
            ("NoP", |s| s.nop as f64),
            ("AN", |s| s.an),
            ("AV", |s| s.av),
            ("AA", |s| s.aa),
        ];
        for (name, get) in columns {
            let values: Vec<f64> = rows.iter().map(|(_, s)| get(s)).collect();
            let (ed, sd) = aggregate_cross_domain(&values)?;
            writeln!(out, "{name},{ed:.6},{sd:.6}").expect("write to string");
        }
    }
    Ok(out)
}
