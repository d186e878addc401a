use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Csg, HarvestMode, ModelConfig, SeaStage};

const PSM_TOL: f64 = 1e-9;

/// A configuration invariant that does not hold, located by a field path
/// such as `bio[3].psm`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.push(path, message);
        }
    }
}

/// Every invariant violation in `config`. Empty means valid.
pub fn validate_config(config: &ModelConfig) -> Vec<Violation> {
    let mut c = Collector(Vec::new());
    let n = config.n_su();
    let t = config.n_years;

    c.check(n >= 1, "stock_units", "at least one stock unit is required");
    c.check(t >= 2, "n_years", "at least two years are required");
    c.check(
        (1..=6).contains(&config.n_smolt_ages),
        "n_smolt_ages",
        "must be between 1 and 6",
    );

    check_stock_units(config, &mut c);
    check_bio(config, &mut c);
    check_fisheries(config, &mut c);
    check_routes(config, &mut c);

    for (a, grid) in config.delayed_spawning.iter().enumerate() {
        let path = format!("delayed_spawning[{a}]");
        if !grid.has_shape(t, n) {
            c.push(&path, format!("shape must be {t} years x {n} units"));
        } else if let Some(v) = grid.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            c.push(&path, format!("proportion {v} outside [0,1]"));
        }
    }
    if !config.stocking_2sw.has_shape(t, n) {
        c.push("stocking_2sw", format!("shape must be {t} years x {n} units"));
    } else if let Some(v) = config
        .stocking_2sw
        .values()
        .iter()
        .find(|v| !(v.is_finite() && **v >= 0.0))
    {
        c.push("stocking_2sw", format!("negative or non-finite count {v}"));
    }

    let g = &config.initial_guess;
    c.check(g.smolts.len() == n, "initial_guess.smolts", "one value per stock unit");
    c.check(
        g.non_maturing.len() == n,
        "initial_guess.non_maturing",
        "one value per stock unit",
    );
    c.check(
        g.smolts.iter().chain(&g.non_maturing).all(|v| v.is_finite() && *v > 0.0),
        "initial_guess",
        "guesses must be positive",
    );
    c.check(g.cv > 0.0, "initial_guess.cv", "must be positive");

    c.check(
        config.process_jitter_cv > 0.0 && config.process_jitter_cv.is_finite(),
        "process_jitter_cv",
        "must be positive",
    );
    c.check(
        config.homewater_cv > 0.0 && config.homewater_cv.is_finite(),
        "homewater_cv",
        "must be positive",
    );
    if let Some(dof) = config.wishart_dof {
        c.check(
            dof > n as f64 - 1.0,
            "wishart_dof",
            format!("must exceed {} for a proper prior", n as f64 - 1.0),
        );
    }

    check_management_units(config, &mut c);
    c.0
}

fn check_stock_units(config: &ModelConfig, c: &mut Collector) {
    let mut labels = HashSet::new();
    for (i, su) in config.stock_units.iter().enumerate() {
        c.check(
            su.index == i + 1,
            format!("stock_units[{i}].index"),
            format!("expected {} got {}", i + 1, su.index),
        );
        c.check(
            labels.insert(su.label.as_str()),
            format!("stock_units[{i}].label"),
            format!("duplicate label {}", su.label),
        );
    }
    // Units of one group must be contiguous and groups in NA, SE, NE order.
    let ranks: Vec<usize> = config
        .stock_units
        .iter()
        .map(|s| Csg::ALL.iter().position(|g| *g == s.csg).unwrap_or(0))
        .collect();
    if ranks.windows(2).any(|w| w[1] < w[0]) {
        c.push("stock_units", "units must be ordered NA, SE, NE");
    }
    if let Some(lb) = config.labrador {
        match config.stock_units.get(lb) {
            Some(su) if su.csg == Csg::NA => {}
            _ => c.push("labrador", "must index a North American stock unit"),
        }
    }
}

fn check_bio(config: &ModelConfig, c: &mut Collector) {
    let n = config.n_su();
    if config.bio.len() != n {
        c.push("bio", format!("expected {n} rows, got {}", config.bio.len()));
    }
    for (r, b) in config.bio.iter().enumerate() {
        let p = format!("bio[{r}]");
        if b.psm.len() != config.n_smolt_ages {
            c.push(
                format!("{p}.psm"),
                format!("expected {} ages, got {}", config.n_smolt_ages, b.psm.len()),
            );
        }
        if b.psm.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            c.push(format!("{p}.psm"), "proportions must be non-negative");
        }
        let s: f64 = b.psm.iter().sum();
        if (s - 1.0).abs() > PSM_TOL {
            c.push(format!("{p}.psm"), format!("psm sum {s} != 1"));
        }
        c.check(b.eggs1 > 0.0, format!("{p}.eggs1"), "must be positive");
        c.check(b.eggs2 > 0.0, format!("{p}.eggs2"), "must be positive");
        c.check(
            b.theta1_mean > 0.0 && b.theta1_mean < 1.0,
            format!("{p}.theta1_mean"),
            "must lie in (0,1)",
        );
        c.check(b.theta1_cv > 0.0, format!("{p}.theta1_cv"), "must be positive");
        c.check(
            b.natural_mortality > 0.0,
            format!("{p}.natural_mortality"),
            "must be positive",
        );
        c.check(b.eta_sample > 0.0, format!("{p}.eta_sample"), "must be positive");
    }
}

fn check_fisheries(config: &ModelConfig, c: &mut Collector) {
    let n = config.n_su();
    let mut ids = HashSet::new();
    for (i, f) in config.fisheries.iter().enumerate() {
        let p = format!("fisheries[{i}]");
        c.check(
            ids.insert(f.id.as_str()),
            format!("{p}.id"),
            format!("duplicate fishery id {}", f.id),
        );
        c.check(!f.scope.is_empty(), format!("{p}.scope"), "empty scope");
        let mut seen = HashSet::new();
        for &r in &f.scope {
            if r >= n {
                c.push(format!("{p}.scope"), format!("unit {r} out of range"));
            } else if !seen.insert(r) {
                c.push(format!("{p}.scope"), format!("unit {r} listed twice"));
            }
        }
        if f.harvest_mode == HarvestMode::ZeroForLabrador {
            c.check(
                f.id.to_ascii_uppercase().starts_with("SPM"),
                format!("{p}.harvest_mode"),
                "ZeroForLabrador applies to the SPM fisheries only",
            );
            c.check(
                config.labrador.is_some_and(|lb| f.scope.contains(&lb)),
                format!("{p}.harvest_mode"),
                "ZeroForLabrador needs Labrador in scope",
            );
        }
        c.check(
            f.dirichlet_eta > 0.0 && f.dirichlet_eta.is_finite(),
            format!("{p}.dirichlet_eta"),
            "must be positive",
        );
        if let Some(cv) = f.fixed_cv {
            c.check(cv > 0.0 && cv.is_finite(), format!("{p}.fixed_cv"), "must be positive");
        }
    }
}

fn check_routes(config: &ModelConfig, c: &mut Collector) {
    let present: HashSet<Csg> = config.stock_units.iter().map(|s| s.csg).collect();
    for csg in Csg::ALL.iter().filter(|g| present.contains(g)) {
        if config.routes.iter().filter(|r| r.csg == *csg).count() != 1 {
            c.push("routes", format!("exactly one route set needed for {csg}"));
        }
    }
    for (i, routes) in config.routes.iter().enumerate() {
        for (name, path, limit) in [
            ("maturing", &routes.maturing, 12.0),
            ("non_maturing", &routes.non_maturing, 24.0),
        ] {
            let p = format!("routes[{i}].{name}");
            let total = path.total_months();
            c.check(
                total < limit,
                &p,
                format!("path lasts {total} months, limit {limit}"),
            );
            if name == "non_maturing" {
                c.check(total >= 12.0, &p, "non-maturing fish must return the next year");
            }
            c.check(
                path.delta_to_return >= 0.0,
                format!("{p}.delta_to_return"),
                "must be non-negative",
            );
            let split = path.year_split();
            let mut used = HashSet::new();
            for (k, s) in path.steps.iter().enumerate() {
                let sp = format!("{p}.steps[{k}]");
                c.check(
                    s.delta_months_before >= 0.0,
                    &sp,
                    "duration must be non-negative",
                );
                c.check(used.insert(&s.fishery), &sp, "fishery repeated on path");
                let Some(fi) = config.fishery_index(&s.fishery) else {
                    c.push(&sp, format!("unknown fishery {}", s.fishery));
                    continue;
                };
                let f = &config.fisheries[fi];
                let expected = match (name, k < split) {
                    ("maturing", _) => SeaStage::OneSwMaturing,
                    (_, true) => SeaStage::OneSwNonMaturing,
                    (_, false) => SeaStage::TwoSw,
                };
                c.check(
                    f.sea_stage == expected,
                    &sp,
                    format!("fishery {} acts on {} but the path is at {}", f.id, f.sea_stage, expected),
                );
            }
        }
    }
    // Every unit in a fishery's scope must pass through it.
    for (i, f) in config.fisheries.iter().enumerate() {
        for &r in f.scope.iter().filter(|&&r| r < config.n_su()) {
            let routed = config.routes_for(config.csg_of(r)).is_some_and(|rt| {
                rt.maturing
                    .steps
                    .iter()
                    .chain(&rt.non_maturing.steps)
                    .any(|s| s.fishery == f.id)
            });
            c.check(
                routed,
                format!("fisheries[{i}].scope"),
                format!("unit {r} never meets fishery {}", f.id),
            );
        }
    }
}

fn check_management_units(config: &ModelConfig, c: &mut Collector) {
    let n = config.n_su();
    let mut owner = vec![0usize; n];
    for (i, u) in config.management_units.iter().enumerate() {
        let p = format!("management_units[{i}]");
        c.check(
            u.cl_eggs > 0.0 && u.cl_eggs.is_finite(),
            format!("{p}.cl_eggs"),
            format!("conservation limit must be positive, got {}", u.cl_eggs),
        );
        c.check(!u.members.is_empty(), format!("{p}.members"), "no members");
        for &m in &u.members {
            if m >= n {
                c.push(format!("{p}.members"), format!("unit {m} out of range"));
            } else {
                owner[m] += 1;
            }
        }
        let groups: HashSet<Csg> = u
            .members
            .iter()
            .filter(|&&m| m < n)
            .map(|&m| config.csg_of(m))
            .collect();
        c.check(
            groups.len() <= 1,
            format!("{p}.members"),
            "members span several continental groups",
        );
    }
    for (r, k) in owner.iter().enumerate() {
        if *k != 1 {
            c.push(
                "management_units",
                format!("stock unit {r} belongs to {k} management units"),
            );
        }
    }
}
