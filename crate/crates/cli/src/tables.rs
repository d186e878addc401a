//! Plot-ready CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use salmon_lcm::domain::{Csg, ModelConfig};
use salmon_lcm::forecast::{ForecastTrajectory, RiskReport};
use salmon_lcm::inference::summary::{quantile_sorted, summarize};
use salmon_lcm::inference::ChainOutput;

const HEADER: &str = "# schema_version: 1\n";
const SERIES: [&str; 7] = [
    "logit_theta3",
    "logit_theta4",
    "theta3",
    "theta4",
    "pfa",
    "spawners_1sw",
    "spawners_2sw",
];

/// `group[a,b]` into its group and indices.
fn split_name(name: &str) -> Option<(&str, Vec<&str>)> {
    let (group, rest) = name.split_once('[')?;
    let inner = rest.strip_suffix(']')?;
    Some((group, inner.split(',').collect()))
}

fn pooled(chains: &ChainOutput, col: usize) -> Vec<f64> {
    chains.column(col).into_iter().flatten().collect()
}

fn interval(mut v: Vec<f64>) -> (f64, f64, f64) {
    v.sort_by(f64::total_cmp);
    (
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.05),
        quantile_sorted(&v, 0.95),
    )
}

/// Posterior mean, median and 90% interval of every monitored unit-year
/// series (survival, maturation, PFA abundance and spawners).
pub fn time_series(chains: &ChainOutput) -> String {
    let mut s = format!("{HEADER}quantity,unit,year,mean,median,q05,q95\n");
    for (col, name) in chains.names.iter().enumerate() {
        let Some((group, idx)) = split_name(name) else {
            continue;
        };
        if !SERIES.contains(&group) || idx.len() != 2 {
            continue;
        }
        let q = summarize(name, &pooled(chains, col), &[0.05, 0.95]);
        let _ = writeln!(
            s,
            "{group},{},{},{},{},{},{}",
            idx[0], idx[1], q.mean, q.median, q.quantiles[0].1, q.quantiles[1].1
        );
    }
    s
}

/// Per-draw averages over the units of each stock complex, summarised by
/// year.
pub fn csg_series(config: &ModelConfig, chains: &ChainOutput) -> String {
    let csg_of: BTreeMap<&str, Csg> = config
        .stock_units
        .iter()
        .map(|u| (u.label.as_str(), u.csg))
        .collect();
    // (quantity, csg, year) -> columns
    let mut cells: BTreeMap<(&str, Csg, &str), Vec<usize>> = BTreeMap::new();
    for (col, name) in chains.names.iter().enumerate() {
        let Some((group, idx)) = split_name(name) else {
            continue;
        };
        if !SERIES.contains(&group) || idx.len() != 2 {
            continue;
        }
        if let Some(&csg) = csg_of.get(idx[0]) {
            cells.entry((group, csg, idx[1])).or_default().push(col);
        }
    }
    let mut s = format!("{HEADER}quantity,csg,year,n_units,median,q05,q95\n");
    for ((group, csg, year), cols) in cells {
        let columns: Vec<Vec<f64>> = cols.iter().map(|&c| pooled(chains, c)).collect();
        let n = columns[0].len();
        let avg: Vec<f64> = (0..n)
            .map(|d| columns.iter().map(|c| c[d]).sum::<f64>() / columns.len() as f64)
            .collect();
        let (med, lo, hi) = interval(avg);
        let _ = writeln!(s, "{group},{csg:?},{year},{},{med},{lo},{hi}", cols.len());
    }
    s
}

/// Posterior-mean correlation matrix of one walk, rows and columns in unit
/// order. `None` when the correlations were not monitored.
pub fn correlation_matrix(config: &ModelConfig, chains: &ChainOutput, code: &str) -> Option<String> {
    let labels: Vec<&str> = config.stock_units.iter().map(|u| u.label.as_str()).collect();
    let pos = |l: &str| labels.iter().position(|x| *x == l);
    let n = labels.len();
    let mut m = vec![vec![f64::NAN; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut found = false;
    for (col, name) in chains.names.iter().enumerate() {
        let Some((group, idx)) = split_name(name) else {
            continue;
        };
        if group != code || idx.len() != 2 {
            continue;
        }
        let (Some(i), Some(j)) = (pos(idx[0]), pos(idx[1])) else {
            continue;
        };
        let v = pooled(chains, col);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        m[i][j] = mean;
        m[j][i] = mean;
        found = true;
    }
    if !found {
        return None;
    }
    let mut s = format!("{HEADER}unit,{}\n", labels.join(","));
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{},{}", labels[i], cells.join(","));
    }
    Some(s)
}

/// Median and 90% interval of forecast quantities by unit and year.
pub fn forecast_csv(config: &ModelConfig, tr: &[ForecastTrajectory]) -> String {
    let mut s = format!("{HEADER}quantity,unit,year,median,q05,q95\n");
    let Some(first) = tr.first() else {
        return s;
    };
    type Pick = fn(&ForecastTrajectory) -> &[f64];
    let quantities: [(&str, Pick); 7] = [
        ("logit_theta3", |t| &t.logit[0]),
        ("logit_theta4", |t| &t.logit[1]),
        ("pfa", |t| &t.pfa),
        ("returns_1sw", |t| &t.returns[0]),
        ("returns_2sw", |t| &t.returns[1]),
        ("eggs_returns", |t| &t.eggs_returns),
        ("eggs_spawners", |t| &t.eggs_spawners),
    ];
    for (name, pick) in quantities {
        for (r, unit) in config.stock_units.iter().enumerate() {
            for k in 0..first.horizon {
                let v: Vec<f64> = tr.iter().map(|t| t.at(pick(t), k, r)).collect();
                let (med, lo, hi) = interval(v);
                let year = config.year_label(config.n_years + k);
                let _ = writeln!(s, "{name},{},{year},{med},{lo},{hi}", unit.label);
            }
        }
    }
    s
}

/// Attainment probability grids: one row per unit or complex, forecast year
/// and Faroes quota, one column per West Greenland quota.
pub fn probability_grids(report: &RiskReport, wg: &[f64], fa: &[f64]) -> String {
    let mut s = format!("{HEADER}kind,name,year,fa_tonnes");
    for w in wg {
        let _ = write!(s, ",wg_{w}");
    }
    s.push('\n');
    let at = |i_fa: usize, i_wg: usize| &report.scenarios[i_fa * wg.len() + i_wg];
    let Some(first) = report.scenarios.first() else {
        return s;
    };
    let mut rows: Vec<(&str, String, Box<dyn Fn(usize, usize, usize) -> f64 + '_>)> = Vec::new();
    for (u, unit) in first.units.iter().enumerate() {
        rows.push((
            "unit",
            unit.unit.clone(),
            Box::new(move |f, w, k| at(f, w).units[u].probability[k]),
        ));
    }
    for (g, csg) in first.csgs.iter().enumerate() {
        rows.push((
            "csg",
            format!("{:?}", csg.csg),
            Box::new(move |f, w, k| at(f, w).csgs[g].probability[k]),
        ));
    }
    for (kind, name, p) in &rows {
        for (k, year) in report.years.iter().enumerate() {
            for (i_fa, f) in fa.iter().enumerate() {
                let _ = write!(s, "{kind},{name},{year},{f}");
                for i_wg in 0..wg.len() {
                    let _ = write!(s, ",{}", p(i_fa, i_wg, k));
                }
                s.push('\n');
            }
        }
    }
    s
}
