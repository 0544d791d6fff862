use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::agents::{PolicyKind, CURVE_CSV_HEADER};
use crate::error::{Error, Result};

use super::experiment::{read_metrics_csv, MetricsRow};

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn metric(row: &MetricsRow, name: &str) -> Result<f64> {
    Ok(match name {
        "total_delay_s" => row.total_delay_s,
        "mt_s" => row.mt_s,
        "ht_s" => row.ht_s,
        "ct_s" => row.ct_s,
        "migration_frequency" => row.migration_frequency,
        "response_delay_s" => row.response_delay_s,
        other => return Err(Error::validation("metric", format!("unknown metric `{other}`"))),
    })
}

fn value_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Wide table: one row per sweep value, one column per policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub sweep_axis: String,
    pub metric: String,
    pub policies: Vec<PolicyKind>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sweep_value".to_string()];
        header.extend(self.policies.iter().map(|p| p.to_string()));
        w.write_record(&header)?;
        for (v, cells) in &self.rows {
            let mut rec = vec![v.clone()];
            rec.extend(cells.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, policy: PolicyKind) -> Option<Vec<f64>> {
        let i = self.policies.iter().position(|p| *p == policy)?;
        Some(self.rows.iter().map(|(_, c)| c[i]).collect())
    }
}

/// Seed medians of `metric` for each policy's run, side by side. All runs
/// must share the sweep axis and values.
pub fn sweep_compare(runs: &[Vec<MetricsRow>], metric_name: &str) -> Result<ComparisonTable> {
    let first = runs
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::validation("runs", "nothing to compare"))?;
    let axis = first.sweep_axis.clone();
    let mut values: Vec<String> = Vec::new();
    for r in &runs[0] {
        if !values.contains(&r.sweep_value) {
            values.push(r.sweep_value.clone());
        }
    }
    let mut policies = Vec::with_capacity(runs.len());
    let mut columns = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let policy = run
            .first()
            .ok_or_else(|| Error::validation(format!("runs[{i}]"), "empty run"))?
            .policy;
        let mut by_value: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in run {
            if r.sweep_axis != axis {
                return Err(Error::validation(
                    format!("runs[{i}].sweep_axis"),
                    format!("`{}` differs from `{axis}`", r.sweep_axis),
                ));
            }
            if r.policy != policy {
                return Err(Error::validation(format!("runs[{i}].policy"), "mixed policies in one run"));
            }
            by_value.entry(&r.sweep_value).or_default().push(metric(r, metric_name)?);
        }
        if by_value.len() != values.len() || values.iter().any(|v| !by_value.contains_key(v.as_str())) {
            return Err(Error::validation(format!("runs[{i}].sweep_value"), "sweep values differ"));
        }
        policies.push(policy);
        columns.push(values.iter().map(|v| median(&by_value[v.as_str()])).collect::<Vec<_>>());
    }
    let rows = values
        .iter()
        .enumerate()
        .map(|(j, v)| (v.clone(), columns.iter().map(|c| c[j]).collect()))
        .collect();
    Ok(ComparisonTable {
        sweep_axis: axis,
        metric: metric_name.into(),
        policies,
        rows,
    })
}

/// Tidy per-figure CSVs from a run directory (or several, one per policy):
/// `convergence.csv` from learning curves, `breakdown.csv` with delay
/// components and `sweep.csv` with totals, both as seed medians ordered by
/// (policy, sweep value).
pub fn emit_plot_data(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut curves: BTreeMap<(PolicyKind, usize), Vec<f64>> = BTreeMap::new();
    for dir in run_dirs {
        rows.extend(read_metrics_csv(&dir.join("metrics.csv"))?);
        let cdir = dir.join("curves");
        if cdir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&cdir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.sort();
            for f in files {
                let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let policy: PolicyKind = name.split('_').next().unwrap_or_default().parse()?;
                let mut rdr = csv::Reader::from_path(&f)?;
                let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
                if header.join(",") != CURVE_CSV_HEADER {
                    return Err(Error::validation(f.display().to_string(), "unexpected curve columns"));
                }
                for rec in rdr.records() {
                    let rec = rec?;
                    let parse = |i: usize| -> Result<f64> {
                        rec.get(i)
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| Error::Parse(format!("{}: bad row", f.display())))
                    };
                    curves
                        .entry((policy, parse(0)? as usize))
                        .or_default()
                        .push(parse(1)?);
                }
            }
        }
    }

    let mut groups: BTreeMap<(PolicyKind, String), Vec<&MetricsRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.policy, r.sweep_value.clone())).or_default().push(r);
    }
    let mut keys: Vec<(PolicyKind, String)> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| value_order(&a.1, &b.1)));

    let mut written = Vec::new();
    let conv = out_dir.join("convergence.csv");
    let mut f = BufWriter::new(File::create(&conv)?);
    writeln!(f, "episode,policy,reward")?;
    for ((policy, ep), v) in &curves {
        writeln!(f, "{ep},{policy},{}", median(v))?;
    }
    f.flush()?;
    written.push(conv);

    let bd = out_dir.join("breakdown.csv");
    let mut f = BufWriter::new(File::create(&bd)?);
    writeln!(f, "policy,sweep_value,mt_s,ht_s,ct_s,total_s")?;
    for k in &keys {
        let g = &groups[k];
        let med = |sel: fn(&MetricsRow) -> f64| median(&g.iter().map(|r| sel(r)).collect::<Vec<_>>());
        let (mt, ht, ct) = (med(|r| r.mt_s), med(|r| r.ht_s), med(|r| r.ct_s));
        writeln!(f, "{},{},{mt},{ht},{ct},{}", k.0, k.1, mt + ht + ct)?;
    }
    f.flush()?;
    written.push(bd);

    let sw = out_dir.join("sweep.csv");
    let mut f = BufWriter::new(File::create(&sw)?);
    writeln!(f, "policy,sweep_axis,sweep_value,total_delay_s,migration_frequency")?;
    for k in &keys {
        let g = &groups[k];
        let total = median(&g.iter().map(|r| r.total_delay_s).collect::<Vec<_>>());
        let mig = median(&g.iter().map(|r| r.migration_frequency).collect::<Vec<_>>());
        writeln!(f, "{},{},{},{total},{mig}", k.0, g[0].sweep_axis, k.1)?;
    }
    f.flush()?;
    written.push(sw);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: PolicyKind, value: &str, seed: u64, total: f64) -> MetricsRow {
        MetricsRow {
            scenario: "s".into(),
            policy,
            sweep_axis: "server_capacity".into(),
            sweep_value: value.into(),
            seed,
            total_delay_s: total,
            mt_s: 0.0,
            ht_s: total / 2.0,
            ct_s: total / 2.0,
            migration_frequency: 0.0,
            response_delay_s: total,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn comparison_shape_and_errors() {
        let am = vec![row(PolicyKind::Am, "6e10", 0, 3.0), row(PolicyKind::Am, "6e10", 1, 1.0), row(PolicyKind::Am, "6e10", 2, 2.0)];
        let nm = vec![row(PolicyKind::Nm, "6e10", 0, 5.0)];
        let t = sweep_compare(&[am.clone(), nm.clone()], "total_delay_s").unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].1, vec![2.0, 5.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sweep_value,am,nm\n6e10,2,5\n");

        let mut other = nm.clone();
        other[0].sweep_axis = "task_count".into();
        assert!(matches!(sweep_compare(&[am.clone(), other], "total_delay_s"), Err(Error::Validation { .. })));
        assert!(sweep_compare(&[am, nm], "nope").is_err());
    }
}
