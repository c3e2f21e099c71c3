use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use famscale::analysis::{self, log_space};
use famscale::branch::{self, BranchFitReport};
use famscale::config::{SynthKind, ToolkitConfig};
use famscale::dataset::{self, BranchRecord, Format, RunRecord};
use famscale::export;
use famscale::familial::{self, FamilialParams, FitReport};
use famscale::flops::ComputeBudget;

use crate::args::{Command, Common, FormatArg, SynthKindArg};
use crate::manifest::{config_digest, RunManifest};
use crate::{classify, CliError};

type CliResult<T> = Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn load_config(common: &Common) -> CliResult<ToolkitConfig> {
    let mut cfg = match &common.config {
        Some(path) => ToolkitConfig::from_toml_str(&read_text(path)?)
            .map_err(|e| classify(&format!("config {}", path.display()), e))?,
        None => ToolkitConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.fit.seed = seed;
        cfg.branch_fit.seed = seed;
    }
    if let Some(kappa) = common.kappa {
        cfg.kappa = kappa;
    }
    cfg.validate().map_err(|e| classify("resolved configuration", e))?;
    Ok(cfg)
}

fn infer_format(path: &Path, explicit: Option<FormatArg>) -> Format {
    match explicit {
        Some(f) => f.into(),
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => Format::Json,
        None => Format::Csv,
    }
}

fn read_runs(path: &Path, format: Option<FormatArg>) -> CliResult<Vec<RunRecord>> {
    let file = fs::File::open(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    dataset::load_runs(std::io::BufReader::new(file), infer_format(path, format))
        .map_err(|e| classify(&path.display().to_string(), e))
}

fn read_branches(path: &Path, format: Option<FormatArg>) -> CliResult<Vec<BranchRecord>> {
    let file = fs::File::open(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    dataset::load_branches(std::io::BufReader::new(file), infer_format(path, format))
        .map_err(|e| classify(&path.display().to_string(), e))
}

/// Accepts bare parameters, a fit report, or a fit-report envelope.
pub fn parse_params_json(text: &str) -> Result<FamilialParams, String> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    if let Some(report) = doc.get_mut("report") {
        doc = report.take();
    }
    if let Some(best) = doc.get_mut("best") {
        doc = best.take();
    }
    let params: FamilialParams = serde_json::from_value(doc).map_err(|e| format!("not a parameter set: {e}"))?;
    let finite = params.to_log().iter().all(|v| v.is_finite());
    if !finite {
        return Err("parameters must be finite".into());
    }
    Ok(params)
}

/// `--params` wins over the config's `params`, which wins over the reference law.
fn resolve_params(path: Option<&PathBuf>, cfg: &mut ToolkitConfig) -> CliResult<FamilialParams> {
    if let Some(path) = path {
        let params = parse_params_json(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
        cfg.params = Some(params);
    }
    Ok(cfg.params.unwrap_or_else(FamilialParams::reference))
}

struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    fn new(
        subcommand: &str,
        dir: &Path,
        cfg: &ToolkitConfig,
        common: &Common,
        inputs: &[Option<&PathBuf>],
    ) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config_path: common.config.as_deref().map(display),
            input_paths: inputs.iter().flatten().map(|p| display(p)).collect(),
            output_path: display(dir),
            seed: cfg.seed,
            toolkit_version: famscale::VERSION.to_string(),
            config_digest: config_digest(cfg),
        };
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| input(format!("cannot write {}: {e}", path.display())))
    }

    fn csv<F>(&self, name: &str, write: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>, &str) -> famscale::Result<()>,
    {
        let mut w = self.create(name)?;
        write(&mut w, &self.manifest.preamble()).map_err(|e| classify(name, e))?;
        w.flush().map_err(|e| input(format!("cannot write {name}: {e}")))
    }

    fn json<T: Serialize>(&self, name: &str, key: &str, body: &T) -> CliResult<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("manifest".into(), serde_json::to_value(&self.manifest).expect("manifest serializes"));
        doc.insert(key.into(), serde_json::to_value(body).map_err(|e| input(format!("{name}: {e}")))?);
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(doc))
            .and_then(|_| writeln!(w).map_err(serde_json::Error::io))
            .and_then(|_| w.flush().map_err(serde_json::Error::io))
            .map_err(|e| input(format!("cannot write {name}: {e}")))
    }
}

/// Relative prediction error on records kept out of the fit.
#[derive(Debug, Serialize)]
struct HoldoutError {
    records: usize,
    max_rel_error: f64,
    mean_rel_error: f64,
}

fn holdout_error(pairs: impl Iterator<Item = famscale::Result<(f64, f64)>>) -> CliResult<HoldoutError> {
    let mut worst: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in pairs {
        let (predicted, observed) = pair.map_err(|e| classify("holdout evaluation", e))?;
        let rel = (predicted / observed - 1.0).abs();
        worst = worst.max(rel);
        sum += rel;
        count += 1;
    }
    Ok(HoldoutError { records: count, max_rel_error: worst, mean_rel_error: sum / count.max(1) as f64 })
}

#[derive(Serialize)]
struct FamilialOutput<'a> {
    #[serde(flatten)]
    report: &'a FitReport,
    holdout: Option<HoldoutError>,
}

#[derive(Serialize)]
struct BranchOutput<'a> {
    #[serde(flatten)]
    report: &'a BranchFitReport,
    holdout: Option<HoldoutError>,
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::FitFamilial { runs, holdout, out, format, max_starts, common } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = max_starts {
                cfg.fit.max_starts = Some(m);
            }
            let records = read_runs(&runs, format)?;
            let held = holdout.as_ref().map(|p| read_runs(p, format)).transpose()?;
            let output = Output::new("fit-familial", &out, &cfg, &common, &[Some(&runs), holdout.as_ref()])?;
            let report = familial::fit(&records, &cfg.fit).map_err(|e| classify("familial fit", e))?;
            let holdout = held
                .map(|h| {
                    holdout_error(h.iter().map(|r| {
                        familial::predict_loss(&report.best, r.n_params, r.tokens, r.granularity).map(|p| (p, r.loss))
                    }))
                })
                .transpose()?;
            output.csv("residuals.csv", |w, pre| export::write_residuals_csv(&records, &report.residuals, w, Some(pre)))?;
            let b = &report.best;
            println!(
                "E={:.6} A={:.6} alpha={:.6} B={:.6} beta={:.6} gamma={:.6} objective={:.6e}",
                b.floor(),
                b.size_coefficient(),
                b.alpha,
                b.data_coefficient(),
                b.beta,
                b.gamma,
                report.best_objective
            );
            if let Some(h) = &holdout {
                println!("holdout max relative error {:.3e} over {} records", h.max_rel_error, h.records);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            output.json("fit_familial.json", "report", &FamilialOutput { report: &report, holdout })
        }
        Command::FitBranch { branches, holdout, out, format, max_starts, common } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = max_starts {
                cfg.branch_fit.max_starts = Some(m);
            }
            let records = read_branches(&branches, format)?;
            let held = holdout.as_ref().map(|p| read_branches(p, format)).transpose()?;
            let output = Output::new("fit-branch", &out, &cfg, &common, &[Some(&branches), holdout.as_ref()])?;
            let report = branch::fit_branch(&records, &cfg.branch_fit).map_err(|e| classify("branch fit", e))?;
            let holdout = held
                .map(|h| {
                    holdout_error(h.iter().map(|r| {
                        branch::predict_branch_loss(
                            &report.best,
                            r.dense_loss,
                            r.upstream_count,
                            r.downstream_count,
                            r.tokens,
                        )
                        .map(|p| (p, r.branch_loss))
                    }))
                })
                .transpose()?;
            let c = &report.canonical;
            println!(
                "alpha_product={:.6e} beta_product={:.6e} a={:.6} reference_tokens={:e} objective={:.6e}",
                c.alpha_product, c.beta_product, c.a_exp, report.reference_tokens, report.best_objective
            );
            if let Some(h) = &holdout {
                println!("holdout max relative error {:.3e} over {} records", h.max_rel_error, h.records);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            output.json("fit_branch.json", "report", &BranchOutput { report: &report, holdout })
        }
        Command::Eval { params, n, d, g, common } => {
            let mut cfg = load_config(&common)?;
            let law = resolve_params(params.as_ref(), &mut cfg)?;
            if !(n > 0.0) || !n.is_finite() || !(d > 0.0) || !d.is_finite() {
                return Err(input(format!("N and D must be positive and finite, got N={n} D={d}")));
            }
            let g = u32::try_from(g).ok().filter(|g| *g >= 1).ok_or_else(|| input(format!("G must be at least 1, got {g}")))?;
            let loss = familial::predict_loss(&law, n, d, g).map_err(|e| classify("eval", e))?;
            println!("{loss:.9e}");
            Ok(())
        }
        Command::Frontier { params, out, common } => {
            let mut cfg = load_config(&common)?;
            let law = resolve_params(params.as_ref(), &mut cfg)?;
            let output = Output::new("frontier", &out, &cfg, &common, &[params.as_ref()])?;
            let sec = &cfg.frontier;
            let mut flops = sec.flops.clone();
            flops.sort_by(f64::total_cmp);
            let points = analysis::compute_frontier(&law, sec.granularity, &flops, cfg.kappa)
                .map_err(|e| classify("frontier", e))?;
            if points.iter().any(|p| p.bracket_edge) {
                eprintln!("warning: some optima sit at the edge of the size bracket");
            }
            output.csv("frontier.csv", |w, pre| export::write_frontier_csv(&points, w, Some(pre)))?;
            let n_axis = log_space(sec.surface_n[0], sec.surface_n[1], sec.surface_points);
            let d_axis = log_space(sec.surface_d[0], sec.surface_d[1], sec.surface_points);
            output.csv("surface.csv", |w, pre| {
                export::write_surface_csv(&law, sec.granularity, &n_axis, &d_axis, w, Some(pre))
            })?;
            output.json("frontier.json", "frontier", &points)
        }
        Command::Contour { params, out, common } => {
            let mut cfg = load_config(&common)?;
            let law = resolve_params(params.as_ref(), &mut cfg)?;
            let output = Output::new("contour", &out, &cfg, &common, &[params.as_ref()])?;
            let sec = &cfg.contour;
            let contours = sec
                .targets
                .iter()
                .map(|&t| {
                    analysis::isoloss_contour(&law, sec.granularity, t, &sec.n_values)
                        .map(|pts| (t, pts))
                        .map_err(|e| classify(&format!("contour at loss {t}"), e))
                })
                .collect::<CliResult<Vec<_>>>()?;
            output.csv("contour.csv", |w, pre| export::write_contour_csv(sec.granularity, &contours, w, Some(pre)))?;
            let body: Vec<Value> = contours
                .iter()
                .map(|(t, pts)| serde_json::json!({ "target_loss": t, "points": pts }))
                .collect();
            output.json("contour.json", "contours", &body)
        }
        Command::El { params, out, common } => {
            let mut cfg = load_config(&common)?;
            let law = resolve_params(params.as_ref(), &mut cfg)?;
            let output = Output::new("el", &out, &cfg, &common, &[params.as_ref()])?;
            let sec = &cfg.el;
            let points = analysis::el_curve(
                &law,
                &sec.granularities,
                (sec.flops_lo, sec.flops_hi),
                sec.points_per_decade,
                cfg.kappa,
                &sec.size_policy,
            )
            .map_err(|e| classify("efficiency leverage", e))?;
            output.csv("el.csv", |w, pre| export::write_el_csv(&points, w, Some(pre)))?;
            for &g in &sec.granularities {
                let curve: Vec<_> = points.iter().filter(|p| p.granularity == g).cloned().collect();
                output.csv(&format!("el_G{g}.csv"), |w, pre| export::write_el_csv(&curve, w, Some(pre)))?;
            }
            output.json("el.json", "el", &points)
        }
        Command::Plan { out, common } => {
            let cfg = load_config(&common)?;
            let output = Output::new("plan", &out, &cfg, &common, &[])?;
            let groups = cfg
                .plan
                .budgets
                .iter()
                .map(|&c| {
                    let label = format!("C={c:e}");
                    let budget = ComputeBudget::new(c, label.clone()).map_err(|e| classify("plan budget", e))?;
                    analysis::plan_isoflop_group(&budget, &cfg.plan.archs, cfg.kappa, cfg.counting_mode)
                        .map(|rows| (label, c, rows))
                        .map_err(|e| classify("plan", e))
                })
                .collect::<CliResult<Vec<_>>>()?;
            output.csv("plan.csv", |w, pre| export::write_plan_csv(&groups, w, Some(pre)))?;
            let body: Vec<Value> = groups
                .iter()
                .map(|(label, c, rows)| serde_json::json!({ "group": label, "flops": c, "rows": rows }))
                .collect();
            output.json("plan.json", "groups", &body)
        }
        Command::Synth { out, kind, format, noise_sigma, holdout, common } => {
            let mut cfg = load_config(&common)?;
            match kind {
                Some(SynthKindArg::Runs) => cfg.synth.kind = SynthKind::Runs,
                Some(SynthKindArg::Branches) => cfg.synth.kind = SynthKind::Branches,
                None => {}
            }
            if let Some(s) = noise_sigma {
                cfg.synth.noise_sigma = s;
            }
            cfg.validate().map_err(|e| classify("resolved configuration", e))?;
            let output = Output::new("synth", &out, &cfg, &common, &[])?;
            synth(&cfg, &output, format.into(), holdout)
        }
    }
}

fn synth(cfg: &ToolkitConfig, output: &Output, format: Format, holdout: bool) -> CliResult<()> {
    let sec = &cfg.synth;
    let law = cfg.params.unwrap_or_else(FamilialParams::reference);
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    match sec.kind {
        SynthKind::Runs => {
            let design = dataset::isoflop_design(&sec.budgets, &sec.n_values, &sec.granularities)
                .map_err(|e| classify("synthetic design", e))?;
            let runs = dataset::synth_runs(&law, &design, cfg.kappa, sec.noise_sigma, cfg.seed)
                .map_err(|e| classify("synthesis", e))?;
            write_runs(output, &format!("runs.{ext}"), &runs, format)?;
            if holdout {
                let held = holdout_runs(&law, &sec.granularities).map_err(|e| classify("holdout synthesis", e))?;
                write_runs(output, &format!("holdout.{ext}"), &held, format)?;
            }
            println!("wrote {} run records", runs.len());
        }
        SynthKind::Branches => {
            let truth = cfg.branch_params.unwrap_or_else(branch::BranchParams::reference);
            let design = dataset::branch_design(&law, &sec.counts, &sec.branch_sizes, &sec.tokens)
                .map_err(|e| classify("synthetic design", e))?;
            let records = dataset::synth_branches(&truth, &design, sec.noise_sigma, cfg.seed)
                .map_err(|e| classify("synthesis", e))?;
            write_branches(output, &format!("branches.{ext}"), &records, format)?;
            if holdout {
                // Geometric midpoints of the training token grid.
                let mids: Vec<f64> = sec.tokens.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
                let held = dataset::branch_design(&law, &sec.counts, &sec.branch_sizes, &mids)
                    .and_then(|d| dataset::synth_branches(&truth, &d, 0.0, cfg.seed))
                    .map_err(|e| classify("holdout synthesis", e))?;
                write_branches(output, &format!("branches_holdout.{ext}"), &held, format)?;
            }
            println!("wrote {} branch records", records.len());
        }
    }
    Ok(())
}

/// Noiseless records on an `N × D × G` grid disjoint from the IsoFLOP design.
pub(crate) fn holdout_runs(law: &FamilialParams, granularities: &[u32]) -> famscale::Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for n in log_space(10f64.powf(8.2), 10f64.powf(9.8), 5) {
        for d in log_space(1e9, 1e12, 5) {
            for &g in granularities {
                out.push(RunRecord {
                    n_params: n,
                    tokens: d,
                    granularity: g,
                    loss: familial::predict_loss(law, n, d, g)?,
                    flops_group: "holdout".into(),
                    flops: None,
                });
            }
        }
    }
    Ok(out)
}

fn write_runs(output: &Output, name: &str, runs: &[RunRecord], format: Format) -> CliResult<()> {
    match format {
        Format::Csv => output.csv(name, |w, pre| dataset::write_runs_csv(runs, w, Some(pre))),
        Format::Json => output.json(name, "records", &runs),
    }
}

fn write_branches(output: &Output, name: &str, records: &[BranchRecord], format: Format) -> CliResult<()> {
    match format {
        Format::Csv => output.csv(name, |w, pre| dataset::write_branches_csv(records, w, Some(pre))),
        Format::Json => output.json(name, "records", &records),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_json_shapes() {
        let bare = serde_json::to_string(&FamilialParams::reference()).unwrap();
        let wrapped = format!(r#"{{"report":{{"best":{bare}}}}}"#);
        for text in [bare.as_str(), wrapped.as_str()] {
            let p = parse_params_json(text).unwrap();
            assert!((p.alpha - 0.2982).abs() < 1e-15);
        }
        assert!(parse_params_json("[1,2]").is_err());
        assert!(parse_params_json("not json").is_err());
    }
}
