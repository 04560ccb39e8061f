//! Speaker verification metrics: EER, minDCF, and DET operating points.
//!
//! Every metric sweeps the same threshold set: each distinct score value plus
//! one reject-all point above the maximum. The decision rule accepts when
//! `score >= threshold` (ties accept), so along the sweep the miss rate is
//! non-decreasing and the false-alarm rate non-increasing. All three outputs
//! depend only on score order, which makes them invariant under strictly
//! increasing score transforms.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Labeled trial scores for one evaluation condition.
#[derive(Debug, Clone, Default)]
pub struct TrialScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl TrialScores {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        let ts = TrialScores { genuine, impostor };
        ts.validate()?;
        Ok(ts)
    }

    fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() {
            return Err(Error::EmptyScores { side: "genuine" });
        }
        if self.impostor.is_empty() {
            return Err(Error::EmptyScores { side: "impostor" });
        }
        for &s in self.genuine.iter().chain(&self.impostor) {
            if !s.is_finite() {
                return Err(Error::ScoreParse { line: 0, reason: format!("non-finite score {s}") });
            }
        }
        Ok(())
    }

    /// Parse a score file: one `label score` pair per line, label either
    /// `target` or `nontarget`. Blank lines are ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().unwrap();
            let score_str = parts.next().ok_or_else(|| Error::ScoreParse {
                line: i + 1,
                reason: "expected 'label score'".into(),
            })?;
            if parts.next().is_some() {
                return Err(Error::ScoreParse {
                    line: i + 1,
                    reason: "trailing fields after 'label score'".into(),
                });
            }
            let score: f64 = score_str.parse().map_err(|e| Error::ScoreParse {
                line: i + 1,
                reason: format!("bad score '{score_str}': {e}"),
            })?;
            match label {
                "target" => genuine.push(score),
                "nontarget" => impostor.push(score),
                other => {
                    return Err(Error::ScoreParse {
                        line: i + 1,
                        reason: format!("unknown label '{other}'"),
                    })
                }
            }
        }
        Self::new(genuine, impostor)
    }
}

/// One operating point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SweepPoint {
    p_miss: f64,
    p_fa: f64,
}

/// Error rates at each distinct score threshold (ascending), plus the
/// reject-all endpoint. Sorting once and walking cumulative counts makes the
/// sweep O(n log n); the brute-force oracle in the tests recounts per
/// threshold.
fn sweep(ts: &TrialScores) -> Vec<SweepPoint> {
    let mut genuine = ts.genuine.clone();
    let mut impostor = ts.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = Vec::with_capacity(genuine.len() + impostor.len());
    thresholds.extend(&genuine);
    thresholds.extend(&impostor);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let g_total = genuine.len() as f64;
    let i_total = impostor.len() as f64;
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    let mut g_below = 0usize; // genuine scores strictly below the threshold
    let mut i_below = 0usize;
    for &t in &thresholds {
        while g_below < genuine.len() && genuine[g_below] < t {
            g_below += 1;
        }
        while i_below < impostor.len() && impostor[i_below] < t {
            i_below += 1;
        }
        points.push(SweepPoint {
            p_miss: g_below as f64 / g_total,
            p_fa: (impostor.len() - i_below) as f64 / i_total,
        });
    }
    // Reject-all endpoint: threshold above every score.
    points.push(SweepPoint { p_miss: 1.0, p_fa: 0.0 });
    points
}

/// Equal error rate: the value where the miss rate crosses the false-alarm
/// rate along the sweep, linearly interpolated between the two bracketing
/// sweep points.
pub fn eer(ts: &TrialScores) -> Result<f64> {
    ts.validate()?;
    let points = sweep(ts);
    // diff = p_miss - p_fa is non-decreasing: -1 at the lowest threshold,
    // +1 at reject-all, so a bracket always exists.
    let mut prev = points[0];
    for &pt in &points[1..] {
        let d_prev = prev.p_miss - prev.p_fa;
        let d_cur = pt.p_miss - pt.p_fa;
        if d_prev == 0.0 {
            return Ok(prev.p_miss);
        }
        if d_prev < 0.0 && d_cur >= 0.0 {
            if d_cur == 0.0 {
                return Ok(pt.p_miss);
            }
            let alpha = -d_prev / (d_cur - d_prev);
            return Ok(prev.p_miss + alpha * (pt.p_miss - prev.p_miss));
        }
        prev = pt;
    }
    // Unreachable given the reject-all endpoint; return the worst case.
    Ok(1.0)
}

/// Minimum of the detection cost function over the sweep, normalized by the
/// cost of the better trivial decision, `min(c_miss * p, c_fa * (1 - p))`.
pub fn min_dcf(ts: &TrialScores, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    ts.validate()?;
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::BadPrior { p: p_target });
    }
    let points = sweep(ts);
    let cost = |pt: &SweepPoint| c_miss * p_target * pt.p_miss + c_fa * (1.0 - p_target) * pt.p_fa;
    let best = points.iter().map(cost).fold(f64::INFINITY, f64::min);
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    Ok(best / norm)
}

/// DET operating points, one per sweep threshold, sorted by false-alarm rate
/// ascending; the miss rate is non-increasing along the list.
pub fn det_points(ts: &TrialScores) -> Result<Vec<(f64, f64)>> {
    ts.validate()?;
    let mut pts: Vec<(f64, f64)> = sweep(ts).iter().map(|p| (p.p_fa, p.p_miss)).collect();
    // The sweep runs threshold-ascending, so reversing sorts by p_fa ascending.
    pts.reverse();
    Ok(pts)
}

/// Write DET points as a two-column CSV with a header line.
pub fn write_det_csv(points: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?,
    );
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "p_fa,p_miss")?;
        for (fa, miss) in points {
            writeln!(w, "{fa:.16e},{miss:.16e}")?;
        }
        w.flush()
    })();
    res.map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
