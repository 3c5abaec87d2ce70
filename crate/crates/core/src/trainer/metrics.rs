//! Per-episode training metrics, stored as JSON lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMetrics {
    /// Training episode index, starting at 0.
    pub episode: u64,
    /// Cumulative reward per agent.
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub length: usize,
    pub f_off: f64,
    pub beta: f64,
    pub c_max: f64,
    /// Mean `KL(behavior || current)` over the episode's minibatch samples.
    pub mean_kl: f64,
    /// Mean gradient norm over the episode's applied steps.
    pub grad_norm: f64,
    /// Gradient steps applied so far.
    pub train_steps: u64,
    /// Steps skipped because of a non-finite gradient, so far.
    pub skipped_steps: u64,
    pub wall_time_s: f64,
}

impl EpisodeMetrics {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics are always serializable")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_run_as(&self, other: &Self) -> bool {
        Self { wall_time_s: 0.0, ..self.clone() } == Self { wall_time_s: 0.0, ..other.clone() }
    }
}

pub fn write_jsonl<W: Write>(out: &mut W, m: &EpisodeMetrics) -> std::io::Result<()> {
    writeln!(out, "{}", m.to_line())
}

pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<EpisodeMetrics>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m = EpisodeMetrics::from_line(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("metrics line {}: {e}", k + 1))
        })?;
        out.push(m);
    }
    Ok(out)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trailing moving median; entry `k` covers `xs[k+1-window ..= k]`, clipped
/// at the start of the series.
pub fn moving_median(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len()).map(|k| median(&xs[(k + 1).saturating_sub(w)..=k])).collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_survive_a_text_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let x: f64 = rng.random_range(-50.0..50.0);
            let m = EpisodeMetrics {
                episode: 1,
                returns: vec![x, x / 3.0],
                mean_return: x / 7.0,
                length: 100,
                f_off: x.abs() / 50.0,
                beta: 0.3 + x * 1e-9,
                c_max: 4.0,
                mean_kl: x * x,
                grad_norm: x.exp2(),
                train_steps: 3,
                skipped_steps: 0,
                wall_time_s: 0.0,
            };
            assert_eq!(EpisodeMetrics::from_line(&m.to_line()).unwrap(), m);
        }
    }

    fn sample(episode: u64) -> EpisodeMetrics {
        EpisodeMetrics {
            episode,
            returns: vec![1.0, 2.5],
            mean_return: 1.75,
            length: 100,
            f_off: 0.05,
            beta: 0.3,
            c_max: 4.0,
            mean_kl: 1e-3,
            grad_norm: 0.2,
            train_steps: 100,
            skipped_steps: 0,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &sample(0)).unwrap();
        write_jsonl(&mut buf, &sample(1)).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![sample(0), sample(1)]);
        assert!(read_jsonl(&b"{\"episode\": 1}\n"[..]).is_err());
    }

    #[test]
    fn wall_time_is_ignored_for_run_identity() {
        let mut b = sample(3);
        b.wall_time_s = 99.0;
        assert!(sample(3).same_run_as(&b));
        b.beta = 0.4;
        assert!(!sample(3).same_run_as(&b));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(moving_median(&[1.0, 5.0, 3.0, 4.0], 3), vec![1.0, 3.0, 3.0, 4.0]);
    }
}
