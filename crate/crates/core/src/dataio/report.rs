use std::fs;
use std::path::Path;

use super::{write_atomic, DataError};
use crate::forecast::{RiskReport, RISK_SCHEMA_VERSION};
use crate::inference::{Convergence, QuantitySummary};

/// Long-format CSV of a risk report: one row per scenario, unit or group,
/// and forecast year.
pub fn risk_report_csv(report: &RiskReport) -> String {
    let mut s = format!("# schema_version: {RISK_SCHEMA_VERSION}\n");
    s.push_str("wg_tonnes,fa_tonnes,kind,name,year,probability,mc_se\n");
    for sc in &report.scenarios {
        for u in &sc.units {
            for (k, year) in report.years.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},unit,{},{},{},{}\n",
                    sc.wg_tonnes, sc.fa_tonnes, u.unit, year, u.probability[k], u.mc_se[k]
                ));
            }
        }
        for g in &sc.csgs {
            for (k, year) in report.years.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},csg,{},{},{},{}\n",
                    sc.wg_tonnes, sc.fa_tonnes, g.csg, year, g.probability[k], g.mc_se[k]
                ));
            }
        }
    }
    s
}

/// Write `<stem>.json` and `<stem>.csv` next to each other.
pub fn write_risk_report(report: &RiskReport, json_path: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(report).expect("serializable");
    write_atomic(json_path, json.as_bytes())?;
    write_atomic(&json_path.with_extension("csv"), risk_report_csv(report).as_bytes())
}

pub fn read_risk_report(path: &Path) -> Result<RiskReport, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_risk_report(&path.display().to_string(), &text)
}

/// Parse risk-report JSON text; `file` names the source in errors.
pub fn parse_risk_report(file: &str, text: &str) -> Result<RiskReport, DataError> {
    super::bundle::parse_json(file, text)
}

/// Posterior summaries with convergence diagnostics, one row per scalar.
pub fn summaries_csv(summaries: &[QuantitySummary], convergence: &[Convergence]) -> String {
    let probs: Vec<f64> = summaries
        .first()
        .map(|s| s.quantiles.iter().map(|(p, _)| *p).collect())
        .unwrap_or_default();
    let mut s = String::from("# schema_version: 1\nname,mean,sd,median");
    for p in &probs {
        s.push_str(&format!(",q{}", p * 100.0));
    }
    s.push_str(",rhat,ess\n");
    for (q, c) in summaries.iter().zip(convergence) {
        s.push_str(&format!("\"{}\",{},{},{}", q.name, q.mean, q.sd, q.median));
        for (_, v) in &q.quantiles {
            s.push_str(&format!(",{v}"));
        }
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        s.push_str(&format!(",{},{}\n", opt(c.rhat), opt(c.ess)));
    }
    s
}

pub fn write_summaries(
    path: &Path,
    summaries: &[QuantitySummary],
    convergence: &[Convergence],
) -> Result<(), DataError> {
    write_atomic(path, summaries_csv(summaries, convergence).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Csg;
    use crate::forecast::{CsgRisk, EggBasis, ScenarioRisk, UnitRisk};

    fn report() -> RiskReport {
        RiskReport {
            schema_version: RISK_SCHEMA_VERSION,
            n_draws: 10,
            horizon: 2,
            years: vec![2015, 2016],
            egg_basis: EggBasis::Returns,
            seed: 3,
            scenarios: vec![ScenarioRisk {
                wg_tonnes: 50.0,
                fa_tonnes: 0.0,
                units: vec![UnitRisk {
                    unit: "Gulf".into(),
                    csg: Csg::NA,
                    cl_eggs: 1e7,
                    probability: vec![0.5, 0.6],
                    mc_se: vec![0.1, 0.1],
                    median_eggs: vec![1e7, 1.1e7],
                }],
                csgs: vec![CsgRisk {
                    csg: Csg::NA,
                    units: vec!["Gulf".into()],
                    probability: vec![0.5, 0.6],
                    mc_se: vec![0.1, 0.1],
                }],
            }],
        }
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let csv = risk_report_csv(&report());
        assert_eq!(csv.lines().count(), 2 + 4);
        assert!(csv.contains("50,0,unit,Gulf,2016,0.6,0.1"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("risk.json");
        write_risk_report(&report(), &p).unwrap();
        assert_eq!(read_risk_report(&p).unwrap(), report());
        assert!(dir.path().join("risk.csv").exists());
    }
}
