//! Fixed parameter tables of the North Atlantic configuration and a builder
//! assembling them into a full-scale [`ModelConfig`].

use super::{
    AllocationDataMode, Csg, CsgRoutes, FisherySpec, FixedBioParams, HarvestMode, InitialGuess,
    ManagementUnit, MigrationPath, ModelConfig, PathStep, QuotaGroup, SeaStage, StockUnitId,
    YearSu,
};

/// Stock-unit labels in model order, with their continental group.
pub const STOCK_UNITS: [(&str, Csg); 24] = [
    ("LB", Csg::NA),
    ("NF", Csg::NA),
    ("QB", Csg::NA),
    ("GF", Csg::NA),
    ("SF", Csg::NA),
    ("US", Csg::NA),
    ("FR", Csg::SE),
    ("E&W", Csg::SE),
    ("IR", Csg::SE),
    ("N.IR", Csg::SE),
    ("SC.W", Csg::SE),
    ("SC.E", Csg::SE),
    ("IC.SW", Csg::SE),
    ("IC.NE", Csg::NE),
    ("SW", Csg::NE),
    ("NO.SE", Csg::NE),
    ("NO.SW", Csg::NE),
    ("NO.MI", Csg::NE),
    ("NO.NO", Csg::NE),
    ("FI", Csg::NE),
    ("RU.KB", Csg::NE),
    ("RU.KW", Csg::NE),
    ("RU.AK", Csg::NE),
    ("RU.RP", Csg::NE),
];

/// Smolt-age proportions as printed, one row per age 1..6, columns in
/// [`STOCK_UNITS`] order. Some columns sum to 0.999 or 1.001 after rounding.
pub const PSM: [[f64; 24]; 6] = [
    [
        0.0, 0.0, 0.0, 0.0, 0.0, 0.377, 0.917, 0.23, 0.05, 0.38, 0.2, 0.05, 0.0, 0.0, 0.07, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        0.0, 0.041, 0.058, 0.398, 0.6, 0.52, 0.083, 0.75, 0.75, 0.59, 0.5, 0.45, 0.05, 0.09, 0.65,
        0.379, 0.379, 0.057, 0.003, 0.0, 0.05, 0.1, 0.05, 0.0,
    ],
    [
        0.077, 0.598, 0.464, 0.573, 0.394, 0.103, 0.0, 0.02, 0.2, 0.03, 0.3, 0.45, 0.73, 0.37,
        0.25, 0.524, 0.524, 0.608, 0.263, 0.26, 0.4, 0.6, 0.55, 0.6,
    ],
    [
        0.542, 0.324, 0.378, 0.029, 0.006, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.21, 0.49, 0.03,
        0.094, 0.094, 0.316, 0.583, 0.59, 0.4, 0.3, 0.4, 0.4,
    ],
    [
        0.341, 0.038, 0.089, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.004,
        0.004, 0.019, 0.138, 0.14, 0.1, 0.0, 0.0, 0.0,
    ],
    [
        0.04, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.012, 0.01, 0.05, 0.0, 0.0, 0.0,
    ],
];

/// Eggs per 1SW spawner.
pub const EGGS1: [f64; 24] = [
    1500.0, 3000.0, 468.0, 547.0, 917.0, 200.0, 1552.0, 1350.0, 2040.0, 1972.0, 2000.0, 2000.0,
    2501.0, 1974.0, 1500.0, 887.0, 887.0, 1050.0, 450.0, 600.0, 350.0, 2700.0, 450.0, 450.0,
];

/// Eggs per 2SW spawner.
pub const EGGS2: [f64; 24] = [
    5500.0, 4000.0, 6402.0, 5956.0, 6107.0, 5500.0, 5520.0, 4550.0, 5950.0, 4069.0, 6000.0,
    6000.0, 6149.0, 7350.0, 4200.0, 4944.0, 4944.0, 5128.0, 6673.0, 10010.0, 10000.0, 4200.0,
    9600.0, 10500.0,
];

/// Faroes allocation proportions over the European units (model order
/// positions 6..24), for 1SW maturing fish.
pub const FAROES_1SWM: [f64; 18] = [
    0.021, 0.082, 0.341, 0.070, 0.107, 0.249, 0.014, 0.005, 0.001, 0.015, 0.003, 0.026, 0.018,
    0.010, 0.008, 0.027, 0.002, 0.001,
];

/// Faroes allocation proportions for 1SW non-maturing and 2SW fish.
pub const FAROES_NM: [f64; 18] = [
    0.007, 0.052, 0.028, 0.006, 0.059, 0.138, 0.005, 0.006, 0.01, 0.1, 0.032, 0.186, 0.136, 0.06,
    0.023, 0.056, 0.013, 0.085,
];

/// Conservation limits in eggs, with member stock units by label.
pub const CONSERVATION_LIMITS: [(&str, f64, &[&str]); 17] = [
    ("Labrador", 243_660_000.0, &["LB"]),
    ("Newfoundland", 267_780_000.0, &["NF"]),
    ("Quebec", 50_380_000.0, &["QB"]),
    ("Gulf", 248_680_000.0, &["GF"]),
    ("Scotia Fundy", 224_140_000.0, &["SF"]),
    ("US", 435_369_000.0, &["US"]),
    ("Iceland (south+west)", 64_273_104.0, &["IC.SW"]),
    ("Scotland", 1_609_542_000.0, &["SC.E", "SC.W"]),
    ("Northern Ireland", 56_281_942.0, &["N.IR"]),
    ("Ireland", 710_711_690.0, &["IR"]),
    ("England&Wales", 211_419_850.0, &["E&W"]),
    ("France", 55_165_500.0, &["FR"]),
    ("Iceland (north+east)", 23_889_096.0, &["IC.NE"]),
    ("Sweden", 13_997_100.0, &["SW"]),
    ("Norway", 444_064_980.0, &["NO.SE", "NO.SW", "NO.MI", "NO.NO"]),
    ("Finland", 104_278_220.0, &["FI"]),
    ("Russia", 357_856_550.0, &["RU.KB", "RU.KW", "RU.AK", "RU.RP"]),
];

pub const NFLD_1SWM: &str = "NFLD_1SWm";
pub const SPM_1SWM: &str = "SPM_1SWm";
pub const NFLD_1SWNM: &str = "NFLD_1SWnm";
pub const WG_1SWNM: &str = "WG_1SWnm";
pub const NFLD_2SW: &str = "NFLD_2SW";
pub const SPM_2SW: &str = "SPM_2SW";
pub const FA_1SWM: &str = "FA_1SWm";
pub const FA_1SWNM: &str = "FA_1SWnm";
pub const FA_2SW: &str = "FA_2SW";

/// West Greenland total-catch CV.
pub const WG_CATCH_CV: f64 = 0.1;

fn step(fishery: &str, months: f64) -> PathStep {
    PathStep {
        fishery: fishery.to_string(),
        delta_months_before: months,
    }
}

/// North American migration routes.
pub fn north_american_routes() -> CsgRoutes {
    CsgRoutes {
        csg: Csg::NA,
        maturing: MigrationPath {
            steps: vec![step(NFLD_1SWM, 7.0), step(SPM_1SWM, 0.5)],
            delta_to_return: 0.5,
        },
        non_maturing: MigrationPath {
            steps: vec![
                step(NFLD_1SWNM, 7.0),
                step(WG_1SWNM, 2.0),
                step(NFLD_2SW, 3.0),
                step(SPM_2SW, 5.0),
            ],
            delta_to_return: 0.5,
        },
    }
}

/// European migration routes, shared by the southern and northern groups.
pub fn european_routes(csg: Csg) -> CsgRoutes {
    CsgRoutes {
        csg,
        maturing: MigrationPath {
            steps: vec![step(FA_1SWM, 0.5)],
            delta_to_return: 7.5,
        },
        non_maturing: MigrationPath {
            steps: vec![
                step(FA_1SWNM, 0.5),
                step(WG_1SWNM, 8.5),
                step(FA_2SW, 5.0),
            ],
            delta_to_return: 3.5,
        },
    }
}

/// Mixed-stock fisheries for a set of stock units. `csgs[r]` is the group
/// of unit `r`; fisheries with an empty scope are omitted.
pub fn mixed_stock_fisheries(csgs: &[Csg], labrador: Option<usize>) -> Vec<FisherySpec> {
    let na: Vec<usize> = (0..csgs.len()).filter(|&r| csgs[r] == Csg::NA).collect();
    let eu: Vec<usize> = (0..csgs.len()).filter(|&r| csgs[r] != Csg::NA).collect();
    let all: Vec<usize> = (0..csgs.len()).collect();
    let with_lb = |mode: HarvestMode| match labrador {
        Some(lb) if na.contains(&lb) => mode,
        _ => HarvestMode::HomogeneousAcrossSU,
    };
    let spec = |id: &str,
                stage: SeaStage,
                scope: &[usize],
                mode: HarvestMode,
                alloc: AllocationDataMode,
                quota: Option<QuotaGroup>| FisherySpec {
        id: id.to_string(),
        sea_stage: stage,
        scope: scope.to_vec(),
        harvest_mode: mode,
        allocation_data_mode: alloc,
        dirichlet_eta: FixedBioParams::ETA_SAMPLE,
        fixed_cv: None,
        quota_group: quota,
    };
    use AllocationDataMode as A;
    use SeaStage as S;
    let mut out = vec![
        spec(
            NFLD_1SWM,
            S::OneSwMaturing,
            &na,
            with_lb(HarvestMode::HomogeneousExceptLabrador),
            A::None,
            None,
        ),
        spec(
            SPM_1SWM,
            S::OneSwMaturing,
            &na,
            with_lb(HarvestMode::ZeroForLabrador),
            A::None,
            None,
        ),
        spec(
            NFLD_1SWNM,
            S::OneSwNonMaturing,
            &na,
            HarvestMode::HomogeneousAcrossSU,
            A::None,
            None,
        ),
        FisherySpec {
            fixed_cv: Some(WG_CATCH_CV),
            ..spec(
                WG_1SWNM,
                S::OneSwNonMaturing,
                &all,
                HarvestMode::PerSU,
                A::AnnualProportions,
                Some(QuotaGroup::WestGreenland),
            )
        },
        spec(
            NFLD_2SW,
            S::TwoSw,
            &na,
            with_lb(HarvestMode::HomogeneousExceptLabrador),
            A::None,
            None,
        ),
        spec(
            SPM_2SW,
            S::TwoSw,
            &na,
            with_lb(HarvestMode::ZeroForLabrador),
            A::None,
            None,
        ),
        spec(
            FA_1SWM,
            S::OneSwMaturing,
            &eu,
            HarvestMode::PerSU,
            A::FixedProportions,
            Some(QuotaGroup::Faroes),
        ),
        spec(
            FA_1SWNM,
            S::OneSwNonMaturing,
            &eu,
            HarvestMode::PerSU,
            A::FixedProportions,
            Some(QuotaGroup::Faroes),
        ),
        spec(
            FA_2SW,
            S::TwoSw,
            &eu,
            HarvestMode::PerSU,
            A::FixedProportions,
            Some(QuotaGroup::Faroes),
        ),
    ];
    out.retain(|f| !f.scope.is_empty());
    out
}

/// Routes for every group present in `csgs`.
pub fn routes_for(csgs: &[Csg]) -> Vec<CsgRoutes> {
    Csg::ALL
        .iter()
        .filter(|c| csgs.contains(c))
        .map(|&c| match c {
            Csg::NA => north_american_routes(),
            other => european_routes(other),
        })
        .collect()
}

/// Fixed biological parameters of the unit at `col` of the tables, with
/// smolt-age proportions exactly as printed.
pub fn bio_row(col: usize) -> FixedBioParams {
    FixedBioParams::new(
        EGGS1[col],
        EGGS2[col],
        (0..6).map(|a| PSM[a][col]).collect(),
    )
}

/// The 24-unit North Atlantic configuration over `n_years` years. Smolt-age
/// proportions are rescaled onto the simplex.
pub fn north_atlantic(first_year: i32, n_years: usize) -> ModelConfig {
    let stock_units: Vec<StockUnitId> = STOCK_UNITS
        .iter()
        .enumerate()
        .map(|(i, (label, csg))| StockUnitId {
            index: i + 1,
            csg: *csg,
            label: label.to_string(),
        })
        .collect();
    let csgs: Vec<Csg> = STOCK_UNITS.iter().map(|(_, c)| *c).collect();
    let n = stock_units.len();
    let labrador = Some(0);
    let management_units = CONSERVATION_LIMITS
        .iter()
        .map(|(name, cl, labels)| ManagementUnit {
            name: name.to_string(),
            cl_eggs: *cl,
            members: labels
                .iter()
                .map(|l| STOCK_UNITS.iter().position(|(s, _)| s == l).expect("label"))
                .collect(),
        })
        .collect();
    let mut cfg = ModelConfig {
        first_year,
        n_years,
        n_smolt_ages: 6,
        stock_units,
        bio: (0..n).map(bio_row).collect(),
        fisheries: mixed_stock_fisheries(&csgs, labrador),
        routes: routes_for(&csgs),
        labrador,
        process_jitter_cv: 0.01,
        homewater_cv: 0.05,
        delayed_spawning: [YearSu::zeros(n_years, n), YearSu::zeros(n_years, n)],
        stocking_2sw: YearSu::zeros(n_years, n),
        initial_guess: InitialGuess {
            smolts: vec![1.0e6; n],
            non_maturing: vec![1.0e4; n],
            cv: 1.0,
        },
        management_units,
        wishart_dof: None,
    };
    cfg.normalize_psm(0.05);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_psm_columns_are_near_simplex() {
        for col in 0..24 {
            let s: f64 = (0..6).map(|a| PSM[a][col]).sum();
            assert!((s - 1.0).abs() <= 0.0101, "column {col} sums to {s}");
        }
    }

    #[test]
    fn faroes_rows_sum_to_one_within_print_precision() {
        assert!((FAROES_1SWM.iter().sum::<f64>() - 1.0).abs() < 0.005);
        assert!((FAROES_NM.iter().sum::<f64>() - 1.0).abs() < 0.005);
    }

    #[test]
    fn north_atlantic_shape() {
        let cfg = north_atlantic(1971, 44);
        assert_eq!(cfg.n_su(), 24);
        assert_eq!(cfg.fisheries.len(), 9);
        assert_eq!(cfg.management_units.len(), 17);
        let na = cfg.stock_units.iter().filter(|s| s.csg == Csg::NA).count();
        let se = cfg.stock_units.iter().filter(|s| s.csg == Csg::SE).count();
        let ne = cfg.stock_units.iter().filter(|s| s.csg == Csg::NE).count();
        assert_eq!((na, se, ne), (6, 7, 11));
        let wg = &cfg.fisheries[cfg.fishery_index(WG_1SWNM).unwrap()];
        assert_eq!(wg.scope.len(), 24);
        let fa = &cfg.fisheries[cfg.fishery_index(FA_1SWM).unwrap()];
        assert_eq!(fa.scope, (6..24).collect::<Vec<_>>());
    }

    #[test]
    fn every_unit_has_one_management_unit() {
        let cfg = north_atlantic(1971, 10);
        let mut seen = vec![0; 24];
        for u in &cfg.management_units {
            for &m in &u.members {
                seen[m] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn labrador_slots() {
        let cfg = north_atlantic(1971, 10);
        let nfld = &cfg.fisheries[cfg.fishery_index(NFLD_1SWM).unwrap()];
        assert_eq!(nfld.n_slots(cfg.labrador), 2);
        let spm = &cfg.fisheries[cfg.fishery_index(SPM_2SW).unwrap()];
        assert_eq!(spm.slot_of(0, cfg.labrador), Some(super::super::HarvestSlot::Zero));
        assert_eq!(
            spm.slot_of(3, cfg.labrador),
            Some(super::super::HarvestSlot::Param(0))
        );
    }
}
