//! Run and branch records: validation, CSV/JSON interchange, exit-loss
//! aggregation, and seeded synthetic generation from known laws.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::branch::{predict_branch_loss, BranchParams};
use crate::error::{Error, Result, RowRejection};
use crate::familial::{predict_loss, FamilialParams};
use crate::flops::{tokens_for_budget, ComputeBudget};

pub const RUNS_HEADER: [&str; 6] = ["n_params", "tokens", "granularity", "loss", "flops_group", "flops"];
pub const BRANCHES_HEADER: [&str; 7] = [
    "upstream_count",
    "downstream_count",
    "tokens",
    "branch_loss",
    "dense_loss",
    "family_label",
    "branch_size",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// One training observation `(N, D, G, L)`; `loss` is the family-average loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n_params: f64,
    pub tokens: f64,
    pub granularity: u32,
    pub loss: f64,
    pub flops_group: String,
    pub flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// Branch points shallower than this exit (P).
    pub upstream_count: u32,
    /// Branch points deeper than this exit (Q).
    pub downstream_count: u32,
    pub tokens: f64,
    pub branch_loss: f64,
    /// Loss of the size- and compute-matched dense model.
    pub dense_loss: f64,
    pub family_label: String,
    pub branch_size: f64,
}

fn positive(field: &'static str, v: f64) -> Option<(&'static str, String)> {
    if !v.is_finite() {
        Some((field, format!("{field} must be finite")))
    } else if v <= 0.0 {
        Some((field, format!("{field} must be positive")))
    } else {
        None
    }
}

impl RunRecord {
    fn problem(&self) -> Option<(&'static str, String)> {
        positive("n_params", self.n_params)
            .or_else(|| positive("tokens", self.tokens))
            .or_else(|| (self.granularity < 1).then(|| ("granularity", "granularity must be at least 1".into())))
            .or_else(|| positive("loss", self.loss))
            .or_else(|| self.flops.and_then(|f| positive("flops", f)))
    }

    pub fn validate(&self) -> Result<()> {
        match self.problem() {
            Some((_, reason)) => Err(Error::Domain(reason)),
            None => Ok(()),
        }
    }
}

impl BranchRecord {
    fn problem(&self) -> Option<(&'static str, String)> {
        positive("tokens", self.tokens)
            .or_else(|| positive("branch_loss", self.branch_loss))
            .or_else(|| positive("dense_loss", self.dense_loss))
            .or_else(|| positive("branch_size", self.branch_size))
    }

    pub fn validate(&self) -> Result<()> {
        match self.problem() {
            Some((_, reason)) => Err(Error::Domain(reason)),
            None => Ok(()),
        }
    }
}

/// Records accepted from an input together with every rejected row.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome<T> {
    pub records: Vec<T>,
    pub rejections: Vec<RowRejection>,
}

impl<T> LoadOutcome<T> {
    pub fn into_result(self) -> Result<Vec<T>> {
        if self.rejections.is_empty() {
            Ok(self.records)
        } else {
            Err(Error::Validation(self.rejections))
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    n_params: Option<f64>,
    tokens: Option<f64>,
    granularity: Option<f64>,
    loss: Option<f64>,
    flops_group: Option<String>,
    flops: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    upstream_count: Option<f64>,
    downstream_count: Option<f64>,
    tokens: Option<f64>,
    branch_loss: Option<f64>,
    dense_loss: Option<f64>,
    family_label: Option<String>,
    branch_size: Option<f64>,
}

type FieldResult<T> = std::result::Result<T, (&'static str, String)>;

fn required(field: &'static str, v: Option<f64>) -> FieldResult<f64> {
    v.ok_or_else(|| (field, format!("{field} is missing")))
}

fn count(field: &'static str, v: Option<f64>, min: f64) -> FieldResult<u32> {
    let v = required(field, v)?;
    if !v.is_finite() || v.fract() != 0.0 || v < min || v > f64::from(u32::MAX) {
        return Err((field, format!("{field} must be an integer >= {min}")));
    }
    Ok(v as u32)
}

impl RawRun {
    fn into_record(self) -> FieldResult<RunRecord> {
        let rec = RunRecord {
            n_params: required("n_params", self.n_params)?,
            tokens: required("tokens", self.tokens)?,
            granularity: count("granularity", self.granularity, 1.0)?,
            loss: required("loss", self.loss)?,
            flops_group: self.flops_group.unwrap_or_default(),
            flops: self.flops,
        };
        match rec.problem() {
            Some(p) => Err(p),
            None => Ok(rec),
        }
    }
}

impl RawBranch {
    fn into_record(self) -> FieldResult<BranchRecord> {
        if self.upstream_count.is_none() && self.downstream_count.is_none() {
            return Err(("upstream_count", "upstream_count and downstream_count are both missing".into()));
        }
        let rec = BranchRecord {
            upstream_count: count("upstream_count", self.upstream_count, 0.0)?,
            downstream_count: count("downstream_count", self.downstream_count, 0.0)?,
            tokens: required("tokens", self.tokens)?,
            branch_loss: required("branch_loss", self.branch_loss)?,
            dense_loss: required("dense_loss", self.dense_loss)?,
            family_label: self.family_label.unwrap_or_default(),
            branch_size: required("branch_size", self.branch_size)?,
        };
        match rec.problem() {
            Some(p) => Err(p),
            None => Ok(rec),
        }
    }
}

fn parse_num(field: &'static str, text: &str) -> FieldResult<Option<f64>> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse::<f64>()
        .map(Some)
        .map_err(|_| (field, format!("{field} is not a number: {text:?}")))
}

fn opt_text(text: &str) -> Option<String> {
    Some(text.to_string())
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str], optional_last: bool) -> Result<usize> {
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names == expected {
        Ok(expected.len())
    } else if optional_last && names == expected[..expected.len() - 1] {
        Ok(expected.len() - 1)
    } else {
        Err(Error::Format(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            names.join(",")
        )))
    }
}

fn load_csv<R, T, F>(source: R, expected: &[&str], optional_last: bool, parse_row: F) -> Result<LoadOutcome<T>>
where
    R: Read,
    F: Fn(&csv::StringRecord) -> FieldResult<T>,
{
    let mut reader = csv_reader(source);
    let width = check_header(&mut reader, expected, optional_last)?;
    let mut out = LoadOutcome {
        records: Vec::new(),
        rejections: Vec::new(),
    };
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let parsed = match row {
            Ok(r) if r.len() != width => Err((
                "",
                format!("expected {width} fields, found {}", r.len()),
            )),
            Ok(r) => parse_row(&r),
            Err(e) if e.is_io_error() => return Err(Error::Format(format!("read failed: {e}"))),
            Err(e) => Err(("", format!("malformed row: {e}"))),
        };
        match parsed {
            Ok(rec) => out.records.push(rec),
            Err((field, reason)) => out.rejections.push(RowRejection {
                row: row_no,
                field: (!field.is_empty()).then(|| field.to_string()),
                reason,
            }),
        }
    }
    Ok(out)
}

fn load_json<R, Raw, T, F>(mut source: R, convert: F) -> Result<LoadOutcome<T>>
where
    R: Read,
    Raw: serde::de::DeserializeOwned,
    F: Fn(Raw) -> FieldResult<T>,
{
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("invalid JSON: {e}")))?;
    // Either a bare array or an envelope object with a `records` array.
    let rows = match doc {
        serde_json::Value::Array(rows) => rows,
        serde_json::Value::Object(mut obj) => match obj.remove("records") {
            Some(serde_json::Value::Array(rows)) => rows,
            _ => return Err(Error::Format("JSON object input needs a `records` array".into())),
        },
        _ => return Err(Error::Format("expected a JSON array of record objects".into())),
    };
    let mut out = LoadOutcome {
        records: Vec::new(),
        rejections: Vec::new(),
    };
    for (i, value) in rows.into_iter().enumerate() {
        let result = serde_json::from_value::<Raw>(value)
            .map_err(|e| ("", format!("malformed object: {e}")))
            .and_then(&convert);
        match result {
            Ok(rec) => out.records.push(rec),
            Err((field, reason)) => out.rejections.push(RowRejection {
                row: i + 1,
                field: (!field.is_empty()).then(|| field.to_string()),
                reason,
            }),
        }
    }
    Ok(out)
}

fn parse_run_row(r: &csv::StringRecord) -> FieldResult<RunRecord> {
    RawRun {
        n_params: parse_num("n_params", &r[0])?,
        tokens: parse_num("tokens", &r[1])?,
        granularity: parse_num("granularity", &r[2])?,
        loss: parse_num("loss", &r[3])?,
        flops_group: opt_text(&r[4]),
        flops: match r.get(5) {
            Some(text) => parse_num("flops", text)?,
            None => None,
        },
    }
    .into_record()
}

fn parse_branch_row(r: &csv::StringRecord) -> FieldResult<BranchRecord> {
    RawBranch {
        upstream_count: parse_num("upstream_count", &r[0])?,
        downstream_count: parse_num("downstream_count", &r[1])?,
        tokens: parse_num("tokens", &r[2])?,
        branch_loss: parse_num("branch_loss", &r[3])?,
        dense_loss: parse_num("dense_loss", &r[4])?,
        family_label: opt_text(&r[5]),
        branch_size: parse_num("branch_size", &r[6])?,
    }
    .into_record()
}

/// Parses every row, keeping rejected rows alongside the accepted records.
/// Only an unreadable source or a wrong header is an error here.
pub fn parse_runs<R: Read>(source: R, format: Format) -> Result<LoadOutcome<RunRecord>> {
    match format {
        Format::Csv => load_csv(source, &RUNS_HEADER, true, parse_run_row),
        Format::Json => load_json(source, RawRun::into_record),
    }
}

pub fn parse_branches<R: Read>(source: R, format: Format) -> Result<LoadOutcome<BranchRecord>> {
    match format {
        Format::Csv => load_csv(source, &BRANCHES_HEADER, false, parse_branch_row),
        Format::Json => load_json(source, RawBranch::into_record),
    }
}

/// Loads run records; any rejected row turns into [`Error::Validation`]
/// listing all of them.
pub fn load_runs<R: Read>(source: R, format: Format) -> Result<Vec<RunRecord>> {
    parse_runs(source, format)?.into_result()
}

pub fn load_branches<R: Read>(source: R, format: Format) -> Result<Vec<BranchRecord>> {
    parse_branches(source, format)?.into_result()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("write failed: {e}"))
}

/// Writes `# `-prefixed comment lines; the CSV loaders skip them.
pub fn write_preamble<W: Write>(w: &mut W, preamble: &str) -> Result<()> {
    for line in preamble.lines() {
        writeln!(w, "# {line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_runs_csv<W: Write>(records: &[RunRecord], mut w: W, preamble: Option<&str>) -> Result<()> {
    if let Some(p) = preamble {
        write_preamble(&mut w, p)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RUNS_HEADER).map_err(io_err)?;
    for r in records {
        out.write_record([
            fmt_real(r.n_params),
            fmt_real(r.tokens),
            r.granularity.to_string(),
            fmt_real(r.loss),
            r.flops_group.clone(),
            r.flops.map(fmt_real).unwrap_or_default(),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_branches_csv<W: Write>(records: &[BranchRecord], mut w: W, preamble: Option<&str>) -> Result<()> {
    if let Some(p) = preamble {
        write_preamble(&mut w, p)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BRANCHES_HEADER).map_err(io_err)?;
    for r in records {
        out.write_record([
            r.upstream_count.to_string(),
            r.downstream_count.to_string(),
            fmt_real(r.tokens),
            fmt_real(r.branch_loss),
            fmt_real(r.dense_loss),
            r.family_label.clone(),
            fmt_real(r.branch_size),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Per-exit losses with their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitLossVector {
    pub per_exit_losses: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ExitLossVector {
    /// Weights `1/G` on every exit.
    pub fn equal(per_exit_losses: Vec<f64>) -> Self {
        let g = per_exit_losses.len();
        Self {
            weights: vec![1.0 / g as f64; g],
            per_exit_losses,
        }
    }
}

/// `Σ w_g·L_g`. Equal weights reduce to the arithmetic mean, computed as a
/// plain mean so the two agree exactly.
pub fn aggregate_exit_losses(exits: &ExitLossVector) -> Result<f64> {
    let (losses, weights) = (&exits.per_exit_losses, &exits.weights);
    if losses.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} exit losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if losses.is_empty() {
        return Err(Error::domain("at least one exit is required"));
    }
    if losses.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::domain("exit losses must be positive"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::domain("exit weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("exit weights sum to {total}, not 1")));
    }
    if weights.iter().all(|w| *w == weights[0]) {
        return Ok(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// One planned run of a synthetic IsoFLOP experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub budget: ComputeBudget,
    pub n_params: f64,
    pub granularity: u32,
}

/// Cartesian product budgets × sizes × granularities, budget-major.
pub fn isoflop_design(budgets: &[f64], n_values: &[f64], granularities: &[u32]) -> Result<Vec<DesignPoint>> {
    let mut design = Vec::with_capacity(budgets.len() * n_values.len() * granularities.len());
    for &c in budgets {
        let budget = ComputeBudget::new(c, format!("C={c:e}"))?;
        for &n in n_values {
            for &g in granularities {
                design.push(DesignPoint {
                    budget: budget.clone(),
                    n_params: n,
                    granularity: g,
                });
            }
        }
    }
    Ok(design)
}

fn noise_source(noise_sigma: f64, seed: u64) -> Result<(ChaCha8Rng, Option<Normal<f64>>)> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::domain(format!("noise sigma must be nonnegative, got {noise_sigma}")));
    }
    let normal = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::domain(e.to_string()))?)
    } else {
        None
    };
    Ok((ChaCha8Rng::seed_from_u64(seed), normal))
}

/// Forward-simulates runs from a known law with multiplicative lognormal
/// noise `L·exp(ε)`, `ε ~ N(0, σ²)`. Identical arguments give identical output.
pub fn synth_runs(
    true_params: &FamilialParams,
    design: &[DesignPoint],
    exit_overhead_fraction: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    if design.is_empty() {
        return Err(Error::domain("synthetic design is empty"));
    }
    let (mut rng, normal) = noise_source(noise_sigma, seed)?;
    design
        .iter()
        .map(|pt| {
            let tokens = tokens_for_budget(&pt.budget, pt.n_params, pt.granularity, exit_overhead_fraction)?;
            let clean = predict_loss(true_params, pt.n_params, tokens, pt.granularity)?;
            let loss = match &normal {
                Some(n) => clean * n.sample(&mut rng).exp(),
                None => clean,
            };
            Ok(RunRecord {
                n_params: pt.n_params,
                tokens,
                granularity: pt.granularity,
                loss,
                flops_group: pt.budget.group_label.clone(),
                flops: Some(pt.budget.total_flops),
            })
        })
        .collect()
}

/// One planned branch observation; `dense_loss` is the matched baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDesignPoint {
    pub upstream_count: u32,
    pub downstream_count: u32,
    pub tokens: f64,
    pub dense_loss: f64,
    pub family_label: String,
    pub branch_size: f64,
}

/// Branch design over `(P, Q)` pairs, sizes and token counts, with dense
/// baselines taken from `dense_law` at `G = 1`.
pub fn branch_design(
    dense_law: &FamilialParams,
    counts: &[(u32, u32)],
    branch_sizes: &[f64],
    tokens: &[f64],
) -> Result<Vec<BranchDesignPoint>> {
    let mut design = Vec::new();
    for &(p, q) in counts {
        for &size in branch_sizes {
            for &d in tokens {
                design.push(BranchDesignPoint {
                    upstream_count: p,
                    downstream_count: q,
                    tokens: d,
                    dense_loss: predict_loss(dense_law, size, d, 1)?,
                    family_label: format!("G={}", p + q + 1),
                    branch_size: size,
                });
            }
        }
    }
    Ok(design)
}

pub fn synth_branches(
    true_params: &BranchParams,
    design: &[BranchDesignPoint],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<BranchRecord>> {
    if design.is_empty() {
        return Err(Error::domain("synthetic design is empty"));
    }
    let (mut rng, normal) = noise_source(noise_sigma, seed)?;
    design
        .iter()
        .map(|pt| {
            let clean = predict_branch_loss(
                true_params,
                pt.dense_loss,
                pt.upstream_count,
                pt.downstream_count,
                pt.tokens,
            )?;
            let branch_loss = match &normal {
                Some(n) => clean * n.sample(&mut rng).exp(),
                None => clean,
            };
            Ok(BranchRecord {
                upstream_count: pt.upstream_count,
                downstream_count: pt.downstream_count,
                tokens: pt.tokens,
                branch_loss,
                dense_loss: pt.dense_loss,
                family_label: pt.family_label.clone(),
                branch_size: pt.branch_size,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_run_row_maps_fields() {
        let text = "n_params,tokens,granularity,loss,flops_group,flops\n1e9,2e10,2,2.81,g19,\n";
        let recs = load_runs(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(
            recs,
            vec![RunRecord {
                n_params: 1e9,
                tokens: 2e10,
                granularity: 2,
                loss: 2.81,
                flops_group: "g19".into(),
                flops: None
            }]
        );
    }

    #[test]
    fn csv_rejects_negative_loss_with_row() {
        let text = "n_params,tokens,granularity,loss,flops_group,flops\n\
                    1e9,2e10,2,2.81,g,\n1e9,2e10,2,2.81,g,\n1e9,2e10,2,-1,g,\n";
        match load_runs(text.as_bytes(), Format::Csv) {
            Err(Error::Validation(rows)) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].to_string(), "loss must be positive, row 3");
                assert_eq!(rows[0].field.as_deref(), Some("loss"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_partial_parse_keeps_every_row_accounted() {
        let text = "n_params,tokens,granularity,loss,flops_group,flops\n\
                    1e9,2e10,2,2.81,g,\nabc,2e10,2,2.81,g,\n1e9,2e10,0,2.81,g,\n1e9,2e10\n1e9,2e10,1,2.5,g,1e19\n";
        let out = parse_runs(text.as_bytes(), Format::Csv).unwrap();
        assert_eq!(out.records.len(), 2);
        let rows: Vec<usize> = out.rejections.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![2, 3, 4]);
    }

    #[test]
    fn csv_header_and_empty() {
        let empty = "n_params,tokens,granularity,loss,flops_group,flops\n";
        assert!(load_runs(empty.as_bytes(), Format::Csv).unwrap().is_empty());
        let five = "n_params,tokens,granularity,loss,flops_group\n1e9,1e10,1,3.0,x\n";
        assert_eq!(load_runs(five.as_bytes(), Format::Csv).unwrap().len(), 1);
        let bad = "n,tokens,granularity,loss,flops_group,flops\n";
        assert!(matches!(load_runs(bad.as_bytes(), Format::Csv), Err(Error::Format(_))));
    }

    #[test]
    fn branch_rows() {
        let head = BRANCHES_HEADER.join(",");
        let ok = format!("{head}\n0,1,2.75e6,2.60,2.5603,fam4B,1e9\n");
        let recs = load_branches(ok.as_bytes(), Format::Csv).unwrap();
        assert_eq!(recs[0].upstream_count, 0);
        assert_eq!(recs[0].downstream_count, 1);
        assert_eq!(recs[0].tokens, 2.75e6);
        assert_eq!(recs[0].family_label, "fam4B");
        let missing = format!("{head}\n,,2.75e6,2.60,2.5603,fam4B,1e9\n");
        assert!(matches!(load_branches(missing.as_bytes(), Format::Csv), Err(Error::Validation(_))));
        let dense = format!("{head}\n0,1,2.75e6,2.60,0,fam4B,1e9\n");
        match load_branches(dense.as_bytes(), Format::Csv) {
            Err(Error::Validation(rows)) => assert_eq!(rows[0].field.as_deref(), Some("dense_loss")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_loading() {
        let text = r#"[{"n_params":1e9,"tokens":2e10,"granularity":2,"loss":2.81,"flops_group":"g19"},
                       {"n_params":1e9,"tokens":2e10,"granularity":2,"loss":"x"}]"#;
        let out = parse_runs(text.as_bytes(), Format::Json).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejections[0].row, 2);
        assert!(matches!(parse_runs("{}".as_bytes(), Format::Json), Err(Error::Format(_))));
        assert!(matches!(parse_runs("3".as_bytes(), Format::Json), Err(Error::Format(_))));
        let wrapped = r#"{"manifest":{},"records":[{"n_params":1e9,"tokens":2e10,"granularity":1,"loss":2.8}]}"#;
        assert_eq!(load_runs(wrapped.as_bytes(), Format::Json).unwrap().len(), 1);
        let b = r#"[{"upstream_count":1,"downstream_count":2,"tokens":1e9,"branch_loss":2.7,"dense_loss":2.6,"family_label":"f","branch_size":1e9}]"#;
        assert_eq!(load_branches(b.as_bytes(), Format::Json).unwrap()[0].downstream_count, 2);
    }

    #[test]
    fn aggregate_examples() {
        let v = ExitLossVector {
            per_exit_losses: vec![2.0, 4.0],
            weights: vec![0.5, 0.5],
        };
        assert_eq!(aggregate_exit_losses(&v).unwrap(), 3.0);
        assert_eq!(aggregate_exit_losses(&ExitLossVector::equal(vec![2.7])).unwrap(), 2.7);
        assert_eq!(aggregate_exit_losses(&ExitLossVector::equal(vec![1.0, 2.0, 3.0, 4.0])).unwrap(), 2.5);
        let mismatch = ExitLossVector {
            per_exit_losses: vec![1.0, 2.0],
            weights: vec![1.0],
        };
        assert!(aggregate_exit_losses(&mismatch).is_err());
        let weighted = ExitLossVector {
            per_exit_losses: vec![2.0, 4.0],
            weights: vec![0.25, 0.75],
        };
        assert_eq!(aggregate_exit_losses(&weighted).unwrap(), 3.5);
    }

    #[test]
    fn synth_noiseless_and_deterministic() {
        let p = FamilialParams::reference();
        let design = isoflop_design(&[1e19, 1e20], &[1e8, 1e9], &[1, 3]).unwrap();
        let recs = synth_runs(&p, &design, 0.05, 0.0, 1).unwrap();
        for r in &recs {
            assert_eq!(r.loss, predict_loss(&p, r.n_params, r.tokens, r.granularity).unwrap());
        }
        let a = synth_runs(&p, &design, 0.05, 0.01, 9).unwrap();
        let b = synth_runs(&p, &design, 0.05, 0.01, 9).unwrap();
        assert_eq!(a, b);
        assert!(synth_runs(&p, &[], 0.05, 0.0, 1).is_err());
        assert!(synth_runs(&p, &design, 0.05, -1.0, 1).is_err());
    }

    #[test]
    fn synth_noise_level() {
        let p = FamilialParams::reference();
        let design = isoflop_design(&[1e20], &crate::analysis::log_space(1e8, 1e10, 250), &[1, 2, 3, 4]).unwrap();
        assert_eq!(design.len(), 1000);
        let recs = synth_runs(&p, &design, 0.05, 0.005, 42).unwrap();
        let logs: Vec<f64> = recs
            .iter()
            .map(|r| (r.loss / predict_loss(&p, r.n_params, r.tokens, r.granularity).unwrap()).ln())
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (logs.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.004..=0.006).contains(&sd), "{sd}");
    }
}
