use crate::CliError;
use multislam::dpgo::DPGO_BENCH_CSV_HEADER;
use multislam::multirobot::BANDWIDTH_CSV_HEADER;
use multislam::pcm::PCM_BENCH_CSV_HEADER;
use std::fmt::Write as _;
use std::path::Path;

pub(crate) const PCM_SELECTION_HEADER: &str = "loops,injected_outliers,accepted_inliers,accepted_outliers,odometry_rejected,checks";
pub(crate) const ACCURACY_HEADER: &str = "robot_id,stage,mean_distance_m,label_accuracy";
pub(crate) const SUMMARY_HEADER: &str = "metric,value";

/// Known artifacts and their headers.
const SCHEMAS: [(&str, &str); 6] = [
    ("pcm_bench.csv", PCM_BENCH_CSV_HEADER),
    ("pcm_selection.csv", PCM_SELECTION_HEADER),
    ("dpgo_bench.csv", DPGO_BENCH_CSV_HEADER),
    ("bandwidth.csv", BANDWIDTH_CSV_HEADER),
    ("accuracy.csv", ACCURACY_HEADER),
    ("summary.csv", SUMMARY_HEADER),
];

/// Splits `text` into rows after checking the header and that every row
/// has the header's column count.
pub fn check_csv(name: &str, text: &str, header: &str) -> Result<Vec<Vec<String>>, CliError> {
    let mut lines = text.lines();
    let got = lines.next().unwrap_or("");
    if got != header {
        return Err(CliError::Runtime(format!("{name}: header {got:?}, expected {header:?}")));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, l)| {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() == width {
                Ok(row)
            } else {
                Err(CliError::Runtime(format!("{name}:{}: {} columns, expected {width}", i + 2, row.len())))
            }
        })
        .collect()
}

fn num(name: &str, s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Runtime(format!("{name}: {s:?} is not a number")))
}

fn section(name: &str, rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut s = String::new();
    match name {
        "pcm_bench.csv" => {
            let mut batch = 0.0;
            let mut inc = 0.0;
            let mut gap = 0i64;
            for r in rows {
                batch += num(name, &r[1])?;
                inc += num(name, &r[2])?;
                gap = gap.max((num(name, &r[3])? as i64 - num(name, &r[4])? as i64).abs());
            }
            let n = rows.last().map_or("0", |r| r[0].as_str());
            let _ = writeln!(s, "  {} checkpoints up to {n} vertices", rows.len());
            let _ = writeln!(s, "  cumulative search time: batch {batch:.1} ms, incremental {inc:.1} ms");
            let _ = writeln!(s, "  largest clique size gap: {gap}");
        }
        "pcm_selection.csv" => {
            for r in rows {
                let _ = writeln!(s, "  {} loops ({} injected outliers): accepted {} inliers, {} outliers", r[0], r[1], r[2], r[3]);
            }
        }
        "dpgo_bench.csv" => {
            for r in rows {
                let ate = if r[1].is_empty() { "n/a".to_string() } else { format!("{:.4} m", num(name, &r[1])?) };
                let _ = writeln!(s, "  {:<12} cost {:>14.4}  ate {ate}  iterations {}", r[0], num(name, &r[2])?, r[3]);
            }
        }
        "bandwidth.csv" => {
            for r in rows {
                let total = num(name, &r[4])?;
                let kp = num(name, &r[6])?;
                let _ = writeln!(
                    s,
                    "  {}: PR {} MB, GV {} MB, DPGO {} MB, total {total} MB ({:.1}% of sending keypoints, {} MB of images)",
                    r[0],
                    r[1],
                    r[2],
                    r[3],
                    if kp > 0.0 { 100.0 * total / kp } else { 0.0 },
                    r[5]
                );
            }
        }
        "accuracy.csv" => {
            for r in rows.iter().filter(|r| r[0] == "merged") {
                let _ = writeln!(s, "  merged {}: mean distance {} m, label accuracy {}", r[1], r[2], r[3]);
            }
        }
        _ => {
            for r in rows {
                let _ = writeln!(s, "  {}: {}", r[0], r[1]);
            }
        }
    }
    Ok(s)
}

/// Plain-text digest of every known CSV in `dir`.
pub fn summarize(dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    for (name, header) in SCHEMAS {
        let p = dir.join(name);
        if !p.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let rows = check_csv(name, &text, header)?;
        let _ = writeln!(out, "{name}");
        out.push_str(&section(name, &rows)?);
    }
    if out.is_empty() {
        return Err(CliError::Runtime(format!("no known artifacts in {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_width_are_enforced() {
        assert_eq!(check_csv("x", "a,b\n1,2\n", "a,b").unwrap(), vec![vec!["1".to_string(), "2".to_string()]]);
        assert!(check_csv("x", "a,c\n1,2\n", "a,b").is_err());
        assert!(check_csv("x", "a,b\n1,2,3\n", "a,b").is_err());
    }
}
