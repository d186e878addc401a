use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_atomic, DataError, SCHEMA_VERSION};
use crate::domain::{
    validate_config, AllocationDataMode, Csg, CsgRoutes, FixedBioParams, FisherySpec, HarvestMode,
    InitialGuess, ManagementUnit, ModelConfig, QuotaGroup, SeaAge, SeaStage, StockUnitId, YearSu,
};
use crate::forecast::{CatchScenario, MeanWeights, SharingFraction};
use crate::likelihood::{
    AllocationObservation, CatchObs, LognormalSummary, ObservationSet, ReturnObs, SeaTotalObs,
};

/// Largest departure of a psm row sum from one that is rescaled rather than
/// rejected.
const PSM_TOLERANCE: f64 = 0.05;
/// Largest departure of an allocation table sum from one that is rescaled.
const ALLOCATION_TOLERANCE: f64 = 0.01;

/// A model configuration with its observations and scenario defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub config: ModelConfig,
    pub obs: ObservationSet,
    pub mean_weights: MeanWeights,
    pub sharing: SharingFraction,
    /// Non-fatal adjustments made while loading.
    pub warnings: Vec<String>,
}

impl DatasetBundle {
    /// Catch scenario using the bundle's mean weights and sharing fraction.
    pub fn scenario(&self, wg_tonnes: f64, fa_tonnes: f64, horizon: usize) -> CatchScenario {
        CatchScenario {
            wg_quota_tonnes: wg_tonnes,
            fa_quota_tonnes: fa_tonnes,
            horizon_years: horizon,
            mean_weights: self.mean_weights.clone(),
            sharing: self.sharing.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub label: String,
    pub csg: Csg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessEntry {
    pub smolts: BTreeMap<String, f64>,
    pub non_maturing: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub cv: f64,
}

fn one() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    0.01
}

fn default_hw_cv() -> f64 {
    0.05
}

/// Paths of the files making up a bundle, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFiles {
    pub bio_params: String,
    pub fisheries: String,
    pub cls: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homewater: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delayed_catches: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sea_totals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delayed_spawning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stocking: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub first_year: i32,
    pub n_years: usize,
    pub n_smolt_ages: usize,
    pub stock_units: Vec<UnitEntry>,
    #[serde(default)]
    pub labrador: Option<String>,
    #[serde(default = "default_jitter")]
    pub process_jitter_cv: f64,
    #[serde(default = "default_hw_cv")]
    pub homewater_cv: f64,
    #[serde(default)]
    pub wishart_dof: Option<f64>,
    pub initial_guess: GuessEntry,
    #[serde(default)]
    pub mean_weights: Option<MeanWeights>,
    #[serde(default)]
    pub sharing_fraction: Option<f64>,
    pub files: ManifestFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FisheryEntry {
    id: String,
    sea_stage: SeaStage,
    scope: Vec<String>,
    harvest_mode: HarvestMode,
    allocation_data_mode: AllocationDataMode,
    #[serde(default = "default_eta")]
    dirichlet_eta: f64,
    #[serde(default)]
    fixed_cv: Option<f64>,
    #[serde(default)]
    quota_group: Option<QuotaGroup>,
}

fn default_eta() -> f64 {
    FixedBioParams::ETA_SAMPLE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FisheriesFile {
    schema_version: u32,
    fisheries: Vec<FisheryEntry>,
    routes: Vec<CsgRoutes>,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = read_text(path)?;
    parse_json(&file_name(path), &text)
}

pub(crate) fn parse_json<T: for<'de> Deserialize<'de>>(file: &str, text: &str) -> Result<T, DataError> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| DataError::schema(file, Some(e.line()), None, e.to_string()))?;
    match v.get("schema_version") {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(other) => {
            return Err(DataError::Version {
                file: file.to_string(),
                found: other.to_string(),
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(DataError::schema(file, None, Some("schema_version"), "missing"));
        }
    }
    serde_json::from_value(v).map_err(|e| DataError::schema(file, None, None, e.to_string()))
}

/// A parsed CSV table with 1-based file line numbers per row.
pub(crate) struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

pub(crate) struct Row<'a> {
    table: &'a Table,
    line: usize,
    record: &'a csv::StringRecord,
}

impl Table {
    /// Parse CSV text whose first line declares the schema version.
    pub(crate) fn parse(file: &str, text: &str, required: &[&str]) -> Result<Self, DataError> {
        let first = text.lines().next().unwrap_or("");
        let version = first
            .strip_prefix('#')
            .and_then(|s| s.trim().strip_prefix("schema_version:"))
            .map(str::trim);
        match version {
            Some(v) if v == SCHEMA_VERSION.to_string() => {}
            Some(v) => {
                return Err(DataError::Version {
                    file: file.to_string(),
                    found: v.to_string(),
                    expected: SCHEMA_VERSION,
                })
            }
            None => {
                return Err(DataError::schema(
                    file,
                    Some(1),
                    None,
                    "first line must be `# schema_version: 1`",
                ))
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| DataError::schema(file, Some(2), None, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        for col in required {
            if !headers.iter().any(|h| h == col) {
                return Err(DataError::schema(file, Some(2), Some(col), "required column missing"));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize);
                DataError::schema(file, line, None, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec));
        }
        Ok(Self {
            file: file.to_string(),
            headers,
            rows,
        })
    }

    pub(crate) fn read(path: &Path, required: &[&str]) -> Result<Self, DataError> {
        Self::parse(&file_name(path), &read_text(path)?, required)
    }

    pub(crate) fn has(&self, col: &str) -> bool {
        self.headers.iter().any(|h| h == col)
    }

    pub(crate) fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(move |(line, record)| Row {
            table: self,
            line: *line,
            record,
        })
    }
}

impl Row<'_> {
    pub(crate) fn error(&self, col: Option<&str>, message: impl Into<String>) -> DataError {
        DataError::schema(&self.table.file, Some(self.line), col, message)
    }

    pub(crate) fn str(&self, col: &str) -> Result<&str, DataError> {
        let i = self
            .table
            .headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| self.error(Some(col), "column missing"))?;
        self.record
            .get(i)
            .ok_or_else(|| self.error(Some(col), "field missing"))
    }

    pub(crate) fn f64(&self, col: &str) -> Result<f64, DataError> {
        let s = self.str(col)?;
        let v: f64 = s
            .parse()
            .map_err(|_| self.error(Some(col), format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.error(Some(col), "value must be finite"));
        }
        Ok(v)
    }

    fn non_negative(&self, col: &str) -> Result<f64, DataError> {
        let v = self.f64(col)?;
        if v < 0.0 {
            return Err(self.error(Some(col), "value must be non-negative"));
        }
        Ok(v)
    }

    fn su(&self, config: &ModelConfig, col: &str) -> Result<usize, DataError> {
        let s = self.str(col)?;
        config
            .su_index(s)
            .ok_or_else(|| self.error(Some(col), format!("unknown stock unit `{s}`")))
    }

    fn year(&self, config: &ModelConfig) -> Result<usize, DataError> {
        let s = self.str("year")?;
        let y: i64 = s
            .parse()
            .map_err(|_| self.error(Some("year"), format!("`{s}` is not a year")))?;
        let t = y - config.first_year as i64;
        if t < 0 || t >= config.n_years as i64 {
            return Err(self.error(
                Some("year"),
                format!(
                    "{y} outside {}..={}",
                    config.first_year,
                    config.year_label(config.n_years - 1)
                ),
            ));
        }
        Ok(t as usize)
    }

    fn sea_age(&self) -> Result<SeaAge, DataError> {
        let s = self.str("sea_age")?;
        SeaAge::parse(s).ok_or_else(|| self.error(Some("sea_age"), format!("`{s}` is not 1SW or 2SW")))
    }

    fn fishery(&self, config: &ModelConfig) -> Result<usize, DataError> {
        let s = self.str("fishery")?;
        config
            .fishery_index(s)
            .ok_or_else(|| self.error(Some("fishery"), format!("unknown fishery `{s}`")))
    }

    fn summary(&self) -> Result<LognormalSummary, DataError> {
        let mean_log = self.f64("mean_log")?;
        let sd_log = self.f64("sd_log")?;
        if sd_log <= 0.0 {
            return Err(self.error(Some("sd_log"), "must be strictly positive"));
        }
        Ok(LognormalSummary { mean_log, sd_log })
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

fn build_config(
    manifest: &Manifest,
    fisheries: FisheriesFile,
    manifest_name: &str,
) -> Result<ModelConfig, DataError> {
    let n = manifest.stock_units.len();
    let t = manifest.n_years;
    let stock_units: Vec<StockUnitId> = manifest
        .stock_units
        .iter()
        .enumerate()
        .map(|(i, u)| StockUnitId {
            index: i + 1,
            csg: u.csg,
            label: u.label.clone(),
        })
        .collect();
    let label_index = |label: &str, what: &str| -> Result<usize, DataError> {
        stock_units
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| DataError::schema(manifest_name, None, Some(what), format!("unknown stock unit `{label}`")))
    };
    let labrador = manifest
        .labrador
        .as_deref()
        .map(|l| label_index(l, "labrador"))
        .transpose()?;
    let guess = |m: &BTreeMap<String, f64>, what: &str| -> Result<Vec<f64>, DataError> {
        stock_units
            .iter()
            .map(|s| {
                m.get(&s.label).copied().ok_or_else(|| {
                    DataError::schema(
                        manifest_name,
                        None,
                        Some(what),
                        format!("no value for stock unit `{}`", s.label),
                    )
                })
            })
            .collect()
    };
    let initial_guess = InitialGuess {
        smolts: guess(&manifest.initial_guess.smolts, "initial_guess.smolts")?,
        non_maturing: guess(&manifest.initial_guess.non_maturing, "initial_guess.non_maturing")?,
        cv: manifest.initial_guess.cv,
    };
    let specs = fisheries
        .fisheries
        .into_iter()
        .map(|f| {
            let scope = f
                .scope
                .iter()
                .map(|l| label_index(l, "fisheries.scope"))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(FisherySpec {
                id: f.id,
                sea_stage: f.sea_stage,
                scope,
                harvest_mode: f.harvest_mode,
                allocation_data_mode: f.allocation_data_mode,
                dirichlet_eta: f.dirichlet_eta,
                fixed_cv: f.fixed_cv,
                quota_group: f.quota_group,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(ModelConfig {
        first_year: manifest.first_year,
        n_years: t,
        n_smolt_ages: manifest.n_smolt_ages,
        stock_units,
        bio: Vec::new(),
        fisheries: specs,
        routes: fisheries.routes,
        labrador,
        process_jitter_cv: manifest.process_jitter_cv,
        homewater_cv: manifest.homewater_cv,
        delayed_spawning: [YearSu::zeros(t, n), YearSu::zeros(t, n)],
        stocking_2sw: YearSu::zeros(t, n),
        initial_guess,
        management_units: Vec::new(),
        wishart_dof: manifest.wishart_dof,
    })
}

fn load_bio(path: &Path, config: &mut ModelConfig) -> Result<(), DataError> {
    let a = config.n_smolt_ages;
    let psm_cols: Vec<String> = (1..=a).map(|k| format!("psm{k}")).collect();
    let mut required = vec!["su", "eggs1", "eggs2"];
    required.extend(psm_cols.iter().map(String::as_str));
    let table = Table::read(path, &required)?;
    let mut bio: Vec<Option<FixedBioParams>> = vec![None; config.n_su()];
    for row in table.rows() {
        let r = row.su(config, "su")?;
        if bio[r].is_some() {
            return Err(row.error(Some("su"), "duplicate stock unit"));
        }
        let psm = psm_cols
            .iter()
            .map(|c| row.non_negative(c))
            .collect::<Result<Vec<_>, _>>()?;
        let mut b = FixedBioParams::new(row.non_negative("eggs1")?, row.non_negative("eggs2")?, psm);
        if table.has("theta1_mean") {
            b.theta1_mean = row.f64("theta1_mean")?;
        }
        if table.has("theta1_cv") {
            b.theta1_cv = row.f64("theta1_cv")?;
        }
        if table.has("natural_mortality") {
            b.natural_mortality = row.f64("natural_mortality")?;
        }
        if table.has("eta_sample") {
            b.eta_sample = row.f64("eta_sample")?;
        }
        bio[r] = Some(b);
    }
    config.bio = bio
        .into_iter()
        .enumerate()
        .map(|(r, b)| {
            b.ok_or_else(|| {
                DataError::schema(
                    &file_name(path),
                    None,
                    Some("su"),
                    format!("no row for stock unit `{}`", config.stock_units[r].label),
                )
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(())
}

fn load_cls(path: &Path, config: &mut ModelConfig) -> Result<(), DataError> {
    let table = Table::read(path, &["unit", "cl_eggs", "su_members"])?;
    for row in table.rows() {
        let members = row
            .str("su_members")?
            .split(';')
            .map(|l| {
                config
                    .su_index(l.trim())
                    .ok_or_else(|| row.error(Some("su_members"), format!("unknown stock unit `{l}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if members.is_empty() {
            return Err(row.error(Some("su_members"), "no members"));
        }
        config.management_units.push(ManagementUnit {
            name: row.str("unit")?.to_string(),
            cl_eggs: row.non_negative("cl_eggs")?,
            members,
        });
    }
    Ok(())
}

fn load_lattice(
    path: &Path,
    config: &ModelConfig,
    value_col: &str,
    mut put: impl FnMut(Option<SeaAge>, usize, usize, f64),
    with_age: bool,
) -> Result<(), DataError> {
    let mut required = vec!["su", "year", value_col];
    if with_age {
        required.push("sea_age");
    }
    let table = Table::read(path, &required)?;
    for row in table.rows() {
        let r = row.su(config, "su")?;
        let t = row.year(config)?;
        let age = if with_age { Some(row.sea_age()?) } else { None };
        put(age, t, r, row.non_negative(value_col)?);
    }
    Ok(())
}

fn load_returns(path: &Path, config: &ModelConfig, obs: &mut ObservationSet) -> Result<(), DataError> {
    let table = Table::read(path, &["su", "year", "sea_age", "mean_log", "sd_log"])?;
    for row in table.rows() {
        obs.returns.push(ReturnObs {
            su: row.su(config, "su")?,
            year: row.year(config)?,
            age: row.sea_age()?,
            summary: row.summary()?,
        });
    }
    Ok(())
}

fn load_catches(
    path: &Path,
    config: &ModelConfig,
    out: &mut Vec<CatchObs>,
    warnings: &mut Vec<String>,
) -> Result<(), DataError> {
    let table = Table::read(path, &["su", "year", "sea_age", "catch"])?;
    for row in table.rows() {
        let c = CatchObs {
            su: row.su(config, "su")?,
            year: row.year(config)?,
            age: row.sea_age()?,
            catch: row.non_negative("catch")?,
        };
        if c.catch == 0.0 {
            warnings.push(format!(
                "{}: row {}: zero catch has no lognormal likelihood and was dropped",
                table.file, row.line
            ));
            continue;
        }
        out.push(c);
    }
    Ok(())
}

fn load_sea_totals(path: &Path, config: &ModelConfig, obs: &mut ObservationSet) -> Result<(), DataError> {
    let table = Table::read(path, &["fishery", "year", "sea_stage", "mean_log", "sd_log"])?;
    for row in table.rows() {
        let f = row.fishery(config)?;
        let s = row.str("sea_stage")?;
        let stage = SeaStage::parse(s)
            .ok_or_else(|| row.error(Some("sea_stage"), format!("unknown sea stage `{s}`")))?;
        if stage != config.fisheries[f].sea_stage {
            return Err(row.error(
                Some("sea_stage"),
                format!("fishery {} operates on {}", config.fisheries[f].id, config.fisheries[f].sea_stage),
            ));
        }
        obs.sea_totals.push(SeaTotalObs {
            fishery: f,
            year: row.year(config)?,
            summary: row.summary()?,
        });
    }
    Ok(())
}

fn load_allocations(
    path: &Path,
    config: &ModelConfig,
    obs: &mut ObservationSet,
    warnings: &mut Vec<String>,
) -> Result<(), DataError> {
    let table = Table::read(path, &["fishery", "year", "su", "proportion"])?;
    let mut groups: Vec<(AllocationObservation, usize)> = Vec::new();
    for row in table.rows() {
        let f = row.fishery(config)?;
        let year = if row.str("year")? == "*" {
            None
        } else {
            Some(row.year(config)?)
        };
        let r = row.su(config, "su")?;
        if !config.fisheries[f].covers(r) {
            return Err(row.error(
                Some("su"),
                format!("{} is outside the scope of {}", config.stock_units[r].label, config.fisheries[f].id),
            ));
        }
        let p = row.non_negative("proportion")?;
        match groups.iter_mut().find(|(g, _)| g.fishery == f && g.year == year) {
            Some((g, _)) => {
                if g.proportions.iter().any(|(s, _)| *s == r) {
                    return Err(row.error(Some("su"), "duplicate stock unit for this fishery and year"));
                }
                g.proportions.push((r, p));
            }
            None => groups.push((
                AllocationObservation {
                    fishery: f,
                    year,
                    proportions: vec![(r, p)],
                    eta: None,
                },
                row.line,
            )),
        }
    }
    for (mut g, line) in groups {
        let s = g.sum();
        let year = g.year.map_or("*".to_string(), |y| config.year_label(y).to_string());
        let id = &config.fisheries[g.fishery].id;
        if (s - 1.0).abs() > ALLOCATION_TOLERANCE {
            return Err(DataError::schema(
                &table.file,
                Some(line),
                Some("proportion"),
                format!("proportions for {id} in {year} sum to {s}"),
            ));
        }
        if (s - 1.0).abs() > 1e-12 {
            g.proportions.iter_mut().for_each(|(_, p)| *p /= s);
            warnings.push(format!("{}: proportions for {id} in {year} summed to {s} and were rescaled", table.file));
        }
        obs.allocations.push(g);
    }
    Ok(())
}

/// Read a manifest and everything it references, validating the result.
pub fn load_bundle(manifest_path: &Path) -> Result<DatasetBundle, DataError> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let files = &manifest.files;
    let fisheries: FisheriesFile = read_json(&resolve(base, &files.fisheries))?;
    let mut config = build_config(&manifest, fisheries, &file_name(manifest_path))?;
    let mut warnings = Vec::new();
    load_bio(&resolve(base, &files.bio_params), &mut config)?;
    for r in config.normalize_psm(PSM_TOLERANCE) {
        warnings.push(format!(
            "psm of {} rescaled to sum to one",
            config.stock_units[r].label
        ));
    }
    load_cls(&resolve(base, &files.cls), &mut config)?;
    if let Some(p) = &files.delayed_spawning {
        let mut grids = config.delayed_spawning.clone();
        load_lattice(&resolve(base, p), &config, "proportion", |age, t, r, v| {
            grids[age.expect("sea age").idx()].set(t, r, v)
        }, true)?;
        config.delayed_spawning = grids;
    }
    if let Some(p) = &files.stocking {
        let mut grid = config.stocking_2sw.clone();
        load_lattice(&resolve(base, p), &config, "count", |_, t, r, v| grid.set(t, r, v), false)?;
        config.stocking_2sw = grid;
    }
    let violations = validate_config(&config);
    if !violations.is_empty() {
        return Err(DataError::Invalid(violations.iter().map(|v| v.to_string()).collect()));
    }

    let mut obs = ObservationSet::default();
    if let Some(p) = &files.returns {
        load_returns(&resolve(base, p), &config, &mut obs)?;
    }
    if let Some(p) = &files.homewater {
        load_catches(&resolve(base, p), &config, &mut obs.homewater, &mut warnings)?;
    }
    if let Some(p) = &files.delayed_catches {
        let mut v = Vec::new();
        load_catches(&resolve(base, p), &config, &mut v, &mut warnings)?;
        for o in &v {
            if o.year == 0 || config.delayed_spawning[o.age.idx()].get(o.year - 1, o.su) <= 0.0 {
                return Err(DataError::Invalid(vec![format!(
                    "delayed catch for {} in {} without delayed spawners the year before",
                    config.stock_units[o.su].label,
                    config.year_label(o.year)
                )]));
            }
        }
        obs.delayed = v;
    }
    if let Some(p) = &files.sea_totals {
        load_sea_totals(&resolve(base, p), &config, &mut obs)?;
    }
    if let Some(p) = &files.allocations {
        load_allocations(&resolve(base, p), &config, &mut obs, &mut warnings)?;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let sharing = match manifest.sharing_fraction {
        Some(f) => SharingFraction { na_eu_fraction: f },
        None => SharingFraction::default(),
    };
    Ok(DatasetBundle {
        config,
        obs,
        mean_weights: manifest.mean_weights.unwrap_or_default(),
        sharing,
        warnings,
    })
}

fn header() -> String {
    format!("# schema_version: {SCHEMA_VERSION}\n")
}

fn label(config: &ModelConfig, r: usize) -> &str {
    &config.stock_units[r].label
}

/// Write a bundle as a manifest plus CSV and JSON files in `dir`. Returns
/// the manifest path.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let c = &bundle.config;
    let o = &bundle.obs;
    let a = c.n_smolt_ages;
    let yr = |t: usize| c.year_label(t);

    let mut s = header();
    s.push_str("su,eggs1,eggs2");
    for k in 1..=a {
        s.push_str(&format!(",psm{k}"));
    }
    s.push_str(",theta1_mean,theta1_cv,natural_mortality,eta_sample\n");
    for (r, b) in c.bio.iter().enumerate() {
        s.push_str(&format!("{},{},{}", label(c, r), b.eggs1, b.eggs2));
        for p in &b.psm {
            s.push_str(&format!(",{p}"));
        }
        s.push_str(&format!(
            ",{},{},{},{}\n",
            b.theta1_mean, b.theta1_cv, b.natural_mortality, b.eta_sample
        ));
    }
    write_atomic(&dir.join("bio_params.csv"), s.as_bytes())?;

    let fisheries = FisheriesFile {
        schema_version: SCHEMA_VERSION,
        fisheries: c
            .fisheries
            .iter()
            .map(|f| FisheryEntry {
                id: f.id.clone(),
                sea_stage: f.sea_stage,
                scope: f.scope.iter().map(|&r| label(c, r).to_string()).collect(),
                harvest_mode: f.harvest_mode,
                allocation_data_mode: f.allocation_data_mode,
                dirichlet_eta: f.dirichlet_eta,
                fixed_cv: f.fixed_cv,
                quota_group: f.quota_group,
            })
            .collect(),
        routes: c.routes.clone(),
    };
    let json = serde_json::to_string_pretty(&fisheries).expect("serializable");
    write_atomic(&dir.join("fisheries.json"), json.as_bytes())?;

    let mut s = header();
    s.push_str("unit,cl_eggs,su_members\n");
    for mu in &c.management_units {
        let members: Vec<&str> = mu.members.iter().map(|&r| label(c, r)).collect();
        s.push_str(&format!("{},{},{}\n", mu.name, mu.cl_eggs, members.join(";")));
    }
    write_atomic(&dir.join("cls.csv"), s.as_bytes())?;

    let mut s = header();
    s.push_str("su,year,sea_age,mean_log,sd_log\n");
    for r in &o.returns {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            label(c, r.su),
            yr(r.year),
            r.age,
            r.summary.mean_log,
            r.summary.sd_log
        ));
    }
    write_atomic(&dir.join("returns.csv"), s.as_bytes())?;

    let catches = |v: &[CatchObs]| {
        let mut s = header();
        s.push_str("su,year,sea_age,catch\n");
        for x in v {
            s.push_str(&format!("{},{},{},{}\n", label(c, x.su), yr(x.year), x.age, x.catch));
        }
        s
    };
    write_atomic(&dir.join("homewater.csv"), catches(&o.homewater).as_bytes())?;
    let delayed_catches = if o.delayed.is_empty() {
        None
    } else {
        write_atomic(&dir.join("delayed_catches.csv"), catches(&o.delayed).as_bytes())?;
        Some("delayed_catches.csv".to_string())
    };

    let mut s = header();
    s.push_str("fishery,year,sea_stage,mean_log,sd_log\n");
    for x in &o.sea_totals {
        let f = &c.fisheries[x.fishery];
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            f.id,
            yr(x.year),
            f.sea_stage,
            x.summary.mean_log,
            x.summary.sd_log
        ));
    }
    write_atomic(&dir.join("sea_totals.csv"), s.as_bytes())?;

    let mut s = header();
    s.push_str("fishery,year,su,proportion\n");
    for x in &o.allocations {
        let year = x.year.map_or("*".to_string(), |y| yr(y).to_string());
        for &(r, p) in &x.proportions {
            s.push_str(&format!("{},{},{},{}\n", c.fisheries[x.fishery].id, year, label(c, r), p));
        }
    }
    write_atomic(&dir.join("allocations.csv"), s.as_bytes())?;

    let lattice_has = |g: &YearSu| g.values().iter().any(|v| *v != 0.0);
    let delayed_spawning = if c.delayed_spawning.iter().any(lattice_has) {
        let mut s = header();
        s.push_str("su,year,sea_age,proportion\n");
        for age in SeaAge::BOTH {
            let g = &c.delayed_spawning[age.idx()];
            for t in 0..c.n_years {
                for r in 0..c.n_su() {
                    if g.get(t, r) != 0.0 {
                        s.push_str(&format!("{},{},{},{}\n", label(c, r), yr(t), age, g.get(t, r)));
                    }
                }
            }
        }
        write_atomic(&dir.join("delayed_spawning.csv"), s.as_bytes())?;
        Some("delayed_spawning.csv".to_string())
    } else {
        None
    };
    let stocking = if lattice_has(&c.stocking_2sw) {
        let mut s = header();
        s.push_str("su,year,count\n");
        for t in 0..c.n_years {
            for r in 0..c.n_su() {
                let v = c.stocking_2sw.get(t, r);
                if v != 0.0 {
                    s.push_str(&format!("{},{},{}\n", label(c, r), yr(t), v));
                }
            }
        }
        write_atomic(&dir.join("stocking.csv"), s.as_bytes())?;
        Some("stocking.csv".to_string())
    } else {
        None
    };

    let by_label = |v: &[f64]| -> BTreeMap<String, f64> {
        v.iter()
            .enumerate()
            .map(|(r, x)| (label(c, r).to_string(), *x))
            .collect()
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        first_year: c.first_year,
        n_years: c.n_years,
        n_smolt_ages: c.n_smolt_ages,
        stock_units: c
            .stock_units
            .iter()
            .map(|s| UnitEntry {
                label: s.label.clone(),
                csg: s.csg,
            })
            .collect(),
        labrador: c.labrador.map(|r| label(c, r).to_string()),
        process_jitter_cv: c.process_jitter_cv,
        homewater_cv: c.homewater_cv,
        wishart_dof: c.wishart_dof,
        initial_guess: GuessEntry {
            smolts: by_label(&c.initial_guess.smolts),
            non_maturing: by_label(&c.initial_guess.non_maturing),
            cv: c.initial_guess.cv,
        },
        mean_weights: Some(bundle.mean_weights.clone()),
        sharing_fraction: Some(bundle.sharing.na_eu_fraction),
        files: ManifestFiles {
            bio_params: "bio_params.csv".into(),
            fisheries: "fisheries.json".into(),
            cls: "cls.csv".into(),
            returns: Some("returns.csv".into()),
            homewater: Some("homewater.csv".into()),
            delayed_catches,
            sea_totals: Some("sea_totals.csv".into()),
            allocations: Some("allocations.csv".into()),
            delayed_spawning,
            stocking,
        },
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("serializable");
    write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{desk_config, generate_synthetic, ObsNoiseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_bundle() -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        generate_synthetic(&desk_config(), 4, &ObsNoiseSpec::default(), &mut rng)
            .unwrap()
            .0
    }

    #[test]
    fn round_trip() {
        let b = desk_bundle();
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(&m).unwrap();
        assert_eq!(back.config, b.config);
        assert_eq!(back.obs, b.obs);
        assert_eq!(back.mean_weights, b.mean_weights);
        assert_eq!(back.sharing, b.sharing);
    }

    fn rewrite(dir: &Path, file: &str, f: impl Fn(String) -> String) {
        let p = dir.join(file);
        let s = fs::read_to_string(&p).unwrap();
        fs::write(&p, f(s)).unwrap();
    }

    #[test]
    fn zero_sd_rejected_with_row() {
        let b = desk_bundle();
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&b, dir.path()).unwrap();
        rewrite(dir.path(), "returns.csv", |s| {
            let mut lines: Vec<String> = s.lines().map(str::to_string).collect();
            let mut f: Vec<&str> = lines[3].split(',').collect();
            f[4] = "0";
            lines[3] = f.join(",");
            lines.join("\n") + "\n"
        });
        let err = load_bundle(&m).unwrap_err();
        match &err {
            DataError::Schema { file, row, column, .. } => {
                assert_eq!(file, "returns.csv");
                assert_eq!(*row, Some(4));
                assert_eq!(column.as_deref(), Some("sd_log"));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("row 4"));
    }

    #[test]
    fn psm_near_one_is_normalized_with_warning() {
        let b = desk_bundle();
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&b, dir.path()).unwrap();
        rewrite(dir.path(), "bio_params.csv", |s| {
            let mut lines: Vec<String> = s.lines().map(str::to_string).collect();
            let mut f: Vec<String> = lines[2].split(',').map(str::to_string).collect();
            let p: Vec<f64> = f[3..7].iter().map(|x| x.parse().unwrap()).collect();
            let scale = 0.999 / p.iter().sum::<f64>();
            for k in 0..4 {
                f[3 + k] = (p[k] * scale).to_string();
            }
            lines[2] = f.join(",");
            lines.join("\n") + "\n"
        });
        let back = load_bundle(&m).unwrap();
        assert!(back.warnings.iter().any(|w| w.contains("psm")));
        let s: f64 = back.config.bio[0].psm.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_version_line_rejected() {
        let e = Table::parse("x.csv", "su,year\nGF,1995\n", &["su"]).err().unwrap();
        assert!(matches!(e, DataError::Schema { row: Some(1), .. }));
        let e = Table::parse("x.csv", "# schema_version: 2\nsu\n", &["su"]).err().unwrap();
        assert!(matches!(e, DataError::Version { .. }));
    }

    #[test]
    fn unknown_unit_names_column() {
        let cfg = desk_config();
        let t = Table::parse("r.csv", "# schema_version: 1\nsu,year\nXX,1995\n", &["su"]).unwrap();
        let row = t.rows().next().unwrap();
        let e = row.su(&cfg, "su").unwrap_err().to_string();
        assert!(e.contains("r.csv") && e.contains("row 3") && e.contains("column su"), "{e}");
    }

    #[test]
    fn allocation_sum_checked() {
        let b = desk_bundle();
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&b, dir.path()).unwrap();
        rewrite(dir.path(), "allocations.csv", |s| {
            let mut lines: Vec<String> = s.lines().map(str::to_string).collect();
            let mut f: Vec<String> = lines[2].split(',').map(str::to_string).collect();
            let p: f64 = f[3].parse().unwrap();
            f[3] = (p + 0.2).to_string();
            lines[2] = f.join(",");
            lines.join("\n") + "\n"
        });
        let e = load_bundle(&m).unwrap_err();
        assert!(matches!(e, DataError::Schema { ref column, .. } if column.as_deref() == Some("proportion")));
    }
}
