use famscale::analysis::{self, log_space};
use famscale::branch::{self, BranchFitConfig, BranchParams};
use famscale::dataset::{self, BranchRecord, RunRecord};
use famscale::familial::{self, FamilialParams, FitConfig};
use famscale::multistart::boundary_hits;
use famscale::numerics::finite_diff_gradient;
use famscale::Error;

fn quick() -> FitConfig {
    FitConfig { max_starts: Some(200), ..FitConfig::default() }
}

fn runs(granularities: &[u32], noise: f64) -> Vec<RunRecord> {
    let design = dataset::isoflop_design(&[1e19, 1e20, 1e21], &log_space(1e8, 1e10, 5), granularities).unwrap();
    dataset::synth_runs(&FamilialParams::reference(), &design, 0.05, noise, 7).unwrap()
}

#[test]
fn single_granularity_flags_gamma() {
    let report = familial::fit(&runs(&[1], 0.0), &quick()).unwrap();
    assert!(report.unidentifiable.contains(&"gamma".to_string()));
    assert!(!report.unidentifiable.contains(&"alpha".to_string()));
}

#[test]
fn too_few_records_warns() {
    let few: Vec<RunRecord> = runs(&[1, 2], 0.0).into_iter().take(5).collect();
    let report = familial::fit(&few, &quick()).unwrap();
    assert!(!report.warnings.is_empty());
}

#[test]
fn empty_input_is_an_error() {
    assert!(familial::fit(&[], &quick()).is_err());
    assert!(branch::fit_branch(&[], &BranchFitConfig::default()).is_err());
}

#[test]
fn record_order_does_not_change_the_fit() {
    let records = runs(&[1, 2, 3, 4], 0.01);
    let mut reversed = records.clone();
    reversed.reverse();
    let a = familial::fit(&records, &quick()).unwrap();
    let b = familial::fit(&reversed, &quick()).unwrap();
    for (x, y) in a.best.to_log().iter().zip(b.best.to_log()) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
    assert!((a.best_objective - b.best_objective).abs() <= 1e-10 * a.best_objective.max(1e-30));
}

#[test]
fn report_is_complete_and_serializable() {
    let records = runs(&[1, 2], 0.0);
    let report = familial::fit(&records, &quick()).unwrap();
    assert_eq!(report.per_start.len(), 200);
    assert_eq!(report.residuals.len(), records.len());
    assert_eq!(report.boundary_hit.len(), 6);
    let best = &report.per_start[report.best_start];
    assert_eq!(best.objective, report.best_objective);
    let json = serde_json::to_string(&report).unwrap();
    let back: familial::FitReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.best_start, report.best_start);
}

#[test]
fn familial_gradient_matches_finite_differences() {
    let records = runs(&[1, 2, 3], 0.05);
    for lp in [[0.1, 6.0, 8.0, 0.3, 0.35, 0.04], [-0.5, 3.0, 10.0, 0.6, 0.2, 0.0]] {
        let analytic = familial::objective_gradient(&lp, &records, 1e-3).unwrap();
        let numeric =
            finite_diff_gradient(|x| familial::objective(&x.try_into().unwrap(), &records, 1e-3).unwrap(), &lp, 1e-6)
                .unwrap();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * scale, "{a} vs {n}");
        }
    }
}

fn branch_records(counts: &[(u32, u32)]) -> Vec<BranchRecord> {
    let design =
        dataset::branch_design(&FamilialParams::reference(), counts, &[1e9], &log_space(1e7, 1e10, 7)).unwrap();
    dataset::synth_branches(&BranchParams::reference(), &design, 0.0, 0).unwrap()
}

#[test]
fn no_upstream_branches_flags_alpha() {
    let records = branch_records(&[(0, 0), (0, 1), (0, 2), (0, 3)]);
    let report = branch::fit_branch(&records, &BranchFitConfig::default()).unwrap();
    assert_eq!(report.unidentifiable, vec!["alpha_b".to_string()]);
    let want = BranchParams::reference().canonical().beta_product;
    assert!((report.canonical.beta_product / want - 1.0).abs() < 1e-3);
}

#[test]
fn zero_penalty_data_fits_exactly() {
    let records = branch_records(&[(0, 0)]);
    let report = branch::fit_branch(&records, &BranchFitConfig::default()).unwrap();
    assert_eq!(report.best_objective, 0.0);
    assert!(report.unidentifiable.contains(&"alpha_b".to_string()));
    assert!(report.unidentifiable.contains(&"beta_b".to_string()));
}

#[test]
fn branch_reference_tokens_default_to_smallest_d() {
    let records = branch_records(&[(0, 1), (1, 1)]);
    let report = branch::fit_branch(&records, &BranchFitConfig::default()).unwrap();
    assert_eq!(report.reference_tokens, 1e7);
    assert_eq!(report.best.d_d, 1e7);
}

#[test]
fn branch_gradient_matches_finite_differences() {
    let mut records = branch_records(&[(0, 1), (1, 2), (1, 3)]);
    for (i, r) in records.iter_mut().enumerate() {
        r.branch_loss *= 1.0 + 0.01 * ((i % 5) as f64 - 2.0);
    }
    let v = [-7.0, -3.0, 14.0, 0.5];
    let analytic = branch::branch_objective_gradient(&v, &records, 1e-3).unwrap();
    let numeric =
        finite_diff_gradient(|x| branch::branch_objective_at(&x.try_into().unwrap(), &records, 1e-3).unwrap(), &v, 1e-6)
            .unwrap();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() <= 1e-6 * scale, "{a} vs {n}");
    }
}

#[test]
fn contours_for_lower_targets_need_more_data() {
    let params = FamilialParams::reference();
    let n_values = log_space(1e8, 1e11, 31);
    let targets = [2.4, 2.6, 2.8, 3.0];
    let contours: Vec<Vec<Option<f64>>> = targets
        .iter()
        .map(|&t| {
            analysis::isoloss_contour(&params, 1, t, &n_values)
                .unwrap()
                .into_iter()
                .map(|p| p.solution.tokens())
                .collect()
        })
        .collect();
    for pair in contours.windows(2) {
        for (lower, higher) in pair[0].iter().zip(&pair[1]) {
            match (lower, higher) {
                (Some(lo), Some(hi)) => assert!(lo > hi),
                (Some(_), None) => panic!("a higher target became infeasible"),
                _ => {}
            }
        }
    }
}

#[test]
fn contour_rejects_nonpositive_target() {
    let params = FamilialParams::reference();
    assert!(matches!(analysis::isoloss_contour(&params, 1, 0.0, &[1e9]), Err(Error::Domain(_))));
}

#[test]
fn boundary_rule_needs_edge_start_and_escape() {
    let axes = vec![vec![0.0, 1.0, 2.0]];
    assert_eq!(boundary_hits(&axes, &[2.0], &[2.5]), vec![true]);
    assert_eq!(boundary_hits(&axes, &[1.0], &[2.5]), vec![false]);
    assert_eq!(boundary_hits(&axes, &[2.0], &[0.5]), vec![false]);
}
