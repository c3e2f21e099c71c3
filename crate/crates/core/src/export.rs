//! CSV layouts for analysis outputs. Reals use 17 significant digits and
//! every file may start with `#` comment lines carrying provenance.

use std::io::Write;

use crate::analysis::{ContourPoint, ELPoint, FrontierPoint, PlanRow};
use crate::dataset::{fmt_real, write_preamble, RunRecord};
use crate::error::{Error, Result};
use crate::familial::{predict_loss, FamilialParams, Residual};

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("write failed: {e}"))
}

fn write_table<W: Write>(
    mut w: W,
    preamble: Option<&str>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    if let Some(p) = preamble {
        write_preamble(&mut w, p)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(io_err)?;
    for row in rows {
        out.write_record(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], w: W, preamble: Option<&str>) -> Result<()> {
    write_table(
        w,
        preamble,
        &["flops", "granularity", "n_opt", "d_opt", "loss_opt", "bracket_edge"],
        points.iter().map(|p| {
            vec![
                fmt_real(p.flops),
                p.granularity.to_string(),
                fmt_real(p.n_opt),
                fmt_real(p.d_opt),
                fmt_real(p.loss_opt),
                p.bracket_edge.to_string(),
            ]
        }),
    )
}

/// Rows of `(target, contour)`; infeasible points leave `tokens` empty.
pub fn write_contour_csv<W: Write>(
    granularity: u32,
    contours: &[(f64, Vec<ContourPoint>)],
    w: W,
    preamble: Option<&str>,
) -> Result<()> {
    write_table(
        w,
        preamble,
        &["target_loss", "granularity", "n_params", "tokens", "feasible"],
        contours.iter().flat_map(|(target, pts)| {
            pts.iter().map(move |p| {
                let tokens = p.solution.tokens();
                vec![
                    fmt_real(*target),
                    granularity.to_string(),
                    fmt_real(p.n_params),
                    tokens.map(fmt_real).unwrap_or_default(),
                    tokens.is_some().to_string(),
                ]
            })
        }),
    )
}

pub fn write_plan_csv<W: Write>(groups: &[(String, f64, Vec<PlanRow>)], w: W, preamble: Option<&str>) -> Result<()> {
    write_table(
        w,
        preamble,
        &["flops_group", "total_flops", "arch_name", "n_params", "granularity", "tokens"],
        groups.iter().flat_map(|(label, flops, rows)| {
            rows.iter().map(move |r| {
                vec![
                    label.clone(),
                    fmt_real(*flops),
                    r.arch_name.clone(),
                    r.n_params.to_string(),
                    r.granularity.to_string(),
                    fmt_real(r.tokens),
                ]
            })
        }),
    )
}

pub fn write_el_csv<W: Write>(points: &[ELPoint], w: W, preamble: Option<&str>) -> Result<()> {
    write_table(
        w,
        preamble,
        &[
            "flops",
            "granularity",
            "n_familial",
            "d_familial",
            "familial_loss",
            "dense_tokens",
            "dense_avg_loss",
            "el",
            "bracket_edge",
        ],
        points.iter().map(|p| {
            vec![
                fmt_real(p.flops),
                p.granularity.to_string(),
                fmt_real(p.n_familial),
                fmt_real(p.d_familial),
                fmt_real(p.familial_loss),
                fmt_real(p.dense_tokens),
                fmt_real(p.dense_avg_loss),
                fmt_real(p.el),
                p.bracket_edge.to_string(),
            ]
        }),
    )
}

pub fn write_residuals_csv<W: Write>(
    records: &[RunRecord],
    residuals: &[Residual],
    w: W,
    preamble: Option<&str>,
) -> Result<()> {
    write_table(
        w,
        preamble,
        &["index", "n_params", "tokens", "granularity", "loss", "log_residual"],
        residuals.iter().map(|r| {
            let rec = &records[r.index];
            vec![
                r.index.to_string(),
                fmt_real(rec.n_params),
                fmt_real(rec.tokens),
                rec.granularity.to_string(),
                fmt_real(rec.loss),
                fmt_real(r.log_residual),
            ]
        }),
    )
}

/// Loss surface on a log-spaced `N × D` grid for one granularity.
pub fn write_surface_csv<W: Write>(
    params: &FamilialParams,
    granularity: u32,
    n_values: &[f64],
    d_values: &[f64],
    w: W,
    preamble: Option<&str>,
) -> Result<()> {
    let mut rows = Vec::with_capacity(n_values.len() * d_values.len());
    for &n in n_values {
        for &d in d_values {
            rows.push(vec![
                fmt_real(n.log10()),
                fmt_real(d.log10()),
                granularity.to_string(),
                fmt_real(predict_loss(params, n, d, granularity)?),
            ]);
        }
    }
    write_table(w, preamble, &["log10_n", "log10_d", "granularity", "loss"], rows)
}
