use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cgflab_core::cgf_model::{group_cov, group_cumulants, validate_model};
use cgflab_core::cumulant_algebra::univariate_sample_cumulants;
use cgflab_core::density_approx::{
    cornish_fisher_quantile, entropy_approx, lugannani_rice_cdf, saddlepoint_density, tail_prob_marginal,
};
use cgflab_core::estimation::{estimate_covariance, fit_coefficients, fit_gamma_mixture};
use cgflab_core::lancaster::{cumulant_via_lancaster_integral, lancaster_measure, EmpiricalOracle};
use cgflab_core::numeric::factorial;
use cgflab_core::simulation::{
    bands_from_replicates, block_maxima_bands_from_replicates, run_replicates, write_matrix_csv, write_replicate_csv,
    ModelSampler, DEFAULT_GRID_POINTS,
};
use cgflab_core::{
    CgfError, CumulantTensor, EllipticalCgf, EntropyWeights, FormulaVariant, GammaMixture, GridSpec, MixtureFit,
    SimulationPlan, UnivariateCgf,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{read_csv, Dataset};
use crate::InputError;

/// Sample cumulants of order `2r` within this many null standard errors of
/// zero end the coefficient series.
pub const DEFAULT_SIGNIFICANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub columns: Vec<usize>,
    /// Model cumulants of the group sum, by order.
    pub model: BTreeMap<usize, f64>,
    pub sample: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCovariance {
    pub groups: [usize; 2],
    pub model: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub psd_adjusted: bool,
    pub adjustment_norm: f64,
    pub sample_sum_cumulants: BTreeMap<usize, f64>,
    /// Coefficients from exact inversion, before any truncation.
    pub raw_coeffs: Vec<f64>,
    /// Orders dropped from the series as indistinguishable from zero.
    pub truncated_orders: Vec<usize>,
    pub mixture_residual: f64,
    pub mixture_cumulants: Vec<f64>,
    pub formula_variant: FormulaVariant,
    pub groups: Vec<GroupSummary>,
    pub group_covariances: Vec<GroupCovariance>,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub columns: Vec<String>,
    pub model: EllipticalCgf,
    pub mixture: GammaMixture,
    pub diagnostics: FitDiagnostics,
}

impl ModelDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    read_csv(cfg.input()?)?.select(&cfg.columns)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ColumnSummary {
    name: String,
    mean: f64,
    variance: f64,
    skewness: f64,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    n: usize,
    j: usize,
    columns: Vec<ColumnSummary>,
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let n = data.nrows();
    let columns = data
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = data.values.column(j);
            let mean = col.mean();
            let variance = if n > 1 {
                col.variance() * n as f64 / (n - 1) as f64
            } else {
                0.0
            };
            let m2 = col.variance();
            let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
            let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
            ColumnSummary {
                name: name.clone(),
                mean,
                variance,
                skewness,
            }
        })
        .collect();
    let summary = IngestSummary {
        n,
        j: data.ncols(),
        columns,
    };
    if cfg.json {
        return print_json(&summary);
    }
    println!("n = {}, J = {}", summary.n, summary.j);
    println!("{:<16} {:>14} {:>14} {:>10}", "column", "mean", "variance", "skewness");
    for c in &summary.columns {
        println!(
            "{:<16} {:>14.6} {:>14.6} {:>10.4}",
            c.name, c.mean, c.variance, c.skewness
        );
    }
    Ok(())
}

fn column_error(e: CgfError, names: &[String]) -> anyhow::Error {
    match e {
        CgfError::ConstantColumn { column } => InputError(format!(
            "column {:?} is constant",
            names.get(column).cloned().unwrap_or_default()
        ))
        .into(),
        other => other.into(),
    }
}

fn group_sums(data: &DMatrix<f64>, group: &[usize]) -> Vec<f64> {
    data.row_iter().map(|r| group.iter().map(|&c| r[c]).sum()).collect()
}

fn group_diagnostics(
    cfg: &RunConfig,
    data: &DMatrix<f64>,
    model: &EllipticalCgf,
) -> Result<(Vec<GroupSummary>, Vec<GroupCovariance>)> {
    let variant = FormulaVariant::default();
    let max_order = *cfg.orders.last().unwrap_or(&2);
    let mut groups = Vec::new();
    for g in &cfg.groups {
        if let Some(&bad) = g.iter().find(|&&c| c >= data.ncols()) {
            bail!(InputError(format!(
                "group index {bad} out of range for {} columns",
                data.ncols()
            )));
        }
        let sample = univariate_sample_cumulants(&group_sums(data, g), max_order)?;
        let mut m = BTreeMap::new();
        let mut s = BTreeMap::new();
        for &o in &cfg.orders {
            // orders beyond the series are zero
            let k = if o / 2 <= model.coeffs().len() {
                group_cumulants(model, g, o, variant)?
            } else {
                0.0
            };
            m.insert(o, k);
            s.insert(o, sample[o - 1]);
        }
        groups.push(GroupSummary {
            columns: g.clone(),
            model: m,
            sample: s,
        });
    }
    let mut covs = Vec::new();
    for a in 0..cfg.groups.len() {
        for b in a + 1..cfg.groups.len() {
            let (za, zb) = (group_sums(data, &cfg.groups[a]), group_sums(data, &cfg.groups[b]));
            let n = za.len() as f64;
            let (ma, mb) = (za.iter().sum::<f64>() / n, zb.iter().sum::<f64>() / n);
            let sample = za.iter().zip(&zb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            covs.push(GroupCovariance {
                groups: [a, b],
                model: group_cov(model, &cfg.groups[a], &cfg.groups[b], variant)?,
                sample,
            });
        }
    }
    Ok((groups, covs))
}

/// Ends the series before the first order `2r ≥ 4` whose sample cumulant is
/// within `significance` null standard errors of zero, using
/// `sd(κ̂_{2r}) ≈ √((2r)!/n)·κ̂₂^r` under normality. Returns the dropped orders.
fn truncate_insignificant(
    coeffs: &mut Vec<f64>,
    kappa: &BTreeMap<usize, f64>,
    n: usize,
    significance: f64,
) -> Vec<usize> {
    let k2 = kappa[&2];
    let keep = (2..=coeffs.len())
        .find(|&r| {
            let se = (factorial(2 * r) / n as f64).sqrt() * k2.powi(r as i32);
            kappa[&(2 * r)].abs() < significance * se
        })
        .map_or(coeffs.len(), |r| r - 1);
    let dropped = (keep + 1..=coeffs.len()).map(|r| 2 * r).collect();
    coeffs.truncate(keep);
    dropped
}

pub fn fit(cfg: &RunConfig, significance: f64) -> Result<()> {
    let data = load_data(cfg)?;
    let n = data.nrows();
    let est = estimate_covariance(&data.values).map_err(|e| column_error(e, &data.names))?;
    let sums: Vec<f64> = data.values.row_iter().map(|r| r.sum()).collect();
    let max_order = *cfg.orders.last().expect("validated");
    let sample = univariate_sample_cumulants(&sums, max_order)?;
    let kappa: BTreeMap<usize, f64> = cfg.orders.iter().map(|&o| (o, sample[o - 1])).collect();
    let raw_coeffs = fit_coefficients(&est.gamma, &kappa, &cfg.orders)?;
    let mut coeffs = raw_coeffs.clone();
    let truncated_orders = truncate_insignificant(&mut coeffs, &kappa, n, significance);

    let means = DVector::from_fn(data.ncols(), |j, _| data.values.column(j).mean());
    let model = EllipticalCgf::new(means, est.gamma.clone(), coeffs.clone())?;
    // without c₂ the mixing variable has no spread
    let fit = if coeffs.len() == 1 {
        let mixture = GammaMixture::point_mass(coeffs[0])?;
        MixtureFit {
            cumulants: mixture.cumulants(1),
            mixture,
            residual: 0.0,
        }
    } else {
        match fit_gamma_mixture(&coeffs, cfg.components) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("coefficients: {coeffs:?}");
                return Err(e.into());
            }
        }
    };
    let (groups, group_covariances) = group_diagnostics(cfg, &data.values, &model)?;
    let doc = ModelDocument {
        columns: data.names.clone(),
        model,
        mixture: fit.mixture.clone(),
        diagnostics: FitDiagnostics {
            n,
            psd_adjusted: est.psd_adjusted,
            adjustment_norm: est.adjustment_norm,
            sample_sum_cumulants: kappa,
            raw_coeffs,
            truncated_orders,
            mixture_residual: fit.residual,
            mixture_cumulants: fit.cumulants.clone(),
            formula_variant: FormulaVariant::default(),
            groups,
            group_covariances,
        },
    };
    let path = cfg.model_path();
    write_file(&path, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
    if cfg.json {
        return print_json(&doc);
    }
    println!("n = {n}, J = {}", data.ncols());
    println!("coefficients c = {:?}", doc.model.coeffs());
    if !doc.diagnostics.truncated_orders.is_empty() {
        println!(
            "orders {:?} indistinguishable from zero; series truncated",
            doc.diagnostics.truncated_orders
        );
    }
    println!(
        "mixture: {} component(s), max relative residual {:.2e}",
        doc.mixture.components().len().max(1),
        fit.residual
    );
    if est.psd_adjusted {
        println!(
            "Gamma projected to PSD (Frobenius adjustment {:.3e})",
            est.adjustment_norm
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn plan_for(cfg: &RunConfig, n: usize) -> Result<SimulationPlan> {
    let mut plan = SimulationPlan::new(n, cfg.replicates, cfg.seed()?).with_levels(cfg.level_fractions());
    plan.block = cfg.block;
    plan.band_probability = cfg.band_probability;
    plan.validate()?;
    Ok(plan)
}

pub fn simulate(cfg: &RunConfig, samples: bool) -> Result<()> {
    let doc = ModelDocument::load(&cfg.model_path())?;
    let n = cfg
        .n
        .ok_or_else(|| InputError("simulate needs a sample size (--n or the config)".into()))?;
    let plan = plan_for(cfg, n)?;
    let summaries = run_replicates(&doc.model, &doc.mixture, &plan)?;

    let mut w = create(&cfg.out_dir.join("replicates.csv"))?;
    write_replicate_csv(&plan, &summaries, &mut w)?;
    w.flush()?;
    let bands = bands_from_replicates(&plan, &summaries, None)?;
    let mut w = create(&cfg.out_dir.join("bands.csv"))?;
    bands.write_csv(&mut w)?;
    w.flush()?;
    if plan.block.is_some() {
        let bm = block_maxima_bands_from_replicates(&plan, &summaries, None, DEFAULT_GRID_POINTS)?;
        let mut w = create(&cfg.out_dir.join("blockmax.csv"))?;
        bm.write_csv(&mut w)?;
        w.flush()?;
    }
    if samples {
        let sample = ModelSampler::new(&doc.model, &doc.mixture)?.sample(n, plan.seed, 0);
        let mut w = create(&cfg.out_dir.join("sample.csv"))?;
        writeln!(w, "{}", doc.columns.join(","))?;
        write_matrix_csv(&sample, &mut w)?;
        w.flush()?;
    }
    if !cfg.json {
        println!(
            "{} replicates of n = {n} written to {}",
            plan.n_replicates,
            cfg.out_dir.display()
        );
    }
    Ok(())
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn format_level(pct: f64) -> String {
    if pct == 0.0 {
        format!("{pct} (min)")
    } else if pct == 100.0 {
        format!("{pct} (max)")
    } else {
        format!("{pct}")
    }
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let doc = ModelDocument::load(&cfg.model_path())?;
    let data = load_data(cfg)?;
    if data.ncols() != doc.model.dim() {
        bail!(InputError(format!(
            "data has {} columns, model has {}",
            data.ncols(),
            doc.model.dim()
        )));
    }
    let n = cfg.n.unwrap_or(data.nrows());
    let plan = plan_for(cfg, n)?;
    let summaries = run_replicates(&doc.model, &doc.mixture, &plan)?;
    let bands = bands_from_replicates(&plan, &summaries, Some(&data.values))?;
    let mut w = create(&cfg.out_dir.join("bands.csv"))?;
    bands.write_csv(&mut w)?;
    w.flush()?;
    let block_bands = match plan.block {
        Some(_) => {
            let bm = block_maxima_bands_from_replicates(&plan, &summaries, Some(&data.values), DEFAULT_GRID_POINTS)?;
            let mut w = create(&cfg.out_dir.join("blockmax.csv"))?;
            bm.write_csv(&mut w)?;
            w.flush()?;
            Some(bm)
        }
        None => None,
    };

    let tail = 50.0 * (1.0 - plan.band_probability);
    let lo_label = format!("{}%", round6(tail));
    let hi_label = format!("{}%", round6(100.0 - tail));
    let mut out = String::new();
    writeln!(
        out,
        "Quantiles of the row sum: {} replicates of n = {n}, seed {}",
        plan.n_replicates, plan.seed
    )?;
    writeln!(out)?;
    writeln!(
        out,
        "{:<14} {:>12} {:>12} {:>12}  covered",
        "Quantile (%)", lo_label, hi_label, "Observed"
    )?;
    let observed = bands.observed.as_ref().expect("observed data given");
    let covered = bands.covered().expect("observed data given");
    for i in 0..bands.levels.len() {
        writeln!(
            out,
            "{:<14} {:>12.3} {:>12.3} {:>12.3}  {}",
            format_level(cfg.levels[i]),
            bands.lower[i],
            bands.upper[i],
            observed[i],
            if covered[i] { "yes" } else { "no" }
        )?;
    }
    writeln!(
        out,
        "\n{} of {} observed quantiles inside the bands.",
        bands.coverage_count().unwrap_or(0),
        bands.levels.len()
    )?;
    writeln!(
        out,
        "Bands are the {lo_label} and {hi_label} quantiles across replicates."
    )?;
    if let Some(bm) = &block_bands {
        let outside = bm
            .observed
            .as_ref()
            .map(|o| {
                o.iter()
                    .zip(bm.lower.iter().zip(&bm.upper))
                    .filter(|(v, (l, u))| *v < *l || *v > *u)
                    .count()
            })
            .unwrap_or(0);
        writeln!(
            out,
            "Block maxima (block {}): observed ECDF outside the bands at {outside} of {} grid points.",
            bm.block,
            bm.grid.len()
        )?;
    }
    writeln!(out)?;
    writeln!(out, "Coefficients c = {:?}", doc.model.coeffs())?;
    writeln!(out, "Group formulas: {:?} variant.", doc.diagnostics.formula_variant)?;
    writeln!(out, "Entropy weights: {:?} variant.", EntropyWeights::default())?;
    write_file(&cfg.out_dir.join("report.txt"), out.as_bytes())?;
    if cfg.json {
        print_json(&bands)
    } else {
        print!("{out}");
        Ok(())
    }
}

fn parse_point(text: &str, dim: usize) -> Result<DVector<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| InputError(format!("bad number {v:?}")))
        })
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != dim {
        bail!(InputError(format!("expected {dim} values, got {}", values.len())));
    }
    Ok(DVector::from_vec(values))
}

fn resolve_subset(doc: &ModelDocument, subset: &[String]) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Ok((0..doc.model.dim()).collect());
    }
    subset
        .iter()
        .map(|s| {
            doc.columns
                .iter()
                .position(|c| c == s)
                .or_else(|| s.parse::<usize>().ok().filter(|&i| i < doc.model.dim()))
                .ok_or_else(|| InputError(format!("unknown column {s:?}")).into())
        })
        .collect()
}

pub enum ApproxQuery {
    Density {
        x: String,
    },
    Tail {
        threshold: Option<f64>,
        marginal: Option<String>,
    },
    Quantile {
        p: f64,
    },
    Entropy,
}

#[derive(Debug, Serialize)]
struct ApproxResult {
    method: &'static str,
    value: f64,
}

pub fn approx(cfg: &RunConfig, subset: &[String], query: ApproxQuery) -> Result<()> {
    let doc = ModelDocument::load(&cfg.model_path())?;
    let subset = resolve_subset(&doc, subset)?;
    let result = match query {
        ApproxQuery::Density { x } => {
            let marginal = doc.model.marginal(&subset)?;
            let x = parse_point(&x, subset.len())?;
            let (f, _) = saddlepoint_density(&marginal, &x)?;
            ApproxResult {
                method: "saddlepoint density",
                value: f,
            }
        }
        ApproxQuery::Tail {
            threshold: Some(t),
            marginal: None,
        } => {
            let sum = doc.model.sum_cgf(&subset)?;
            ApproxResult {
                method: "Lugannani-Rice P(S >= t)",
                value: 1.0 - lugannani_rice_cdf(&sum, t)?,
            }
        }
        ApproxQuery::Tail {
            threshold: None,
            marginal: Some(m),
        } => {
            let t = parse_point(&m, subset.len())?;
            ApproxResult {
                method: "saddlepoint orthant P(Y >= t)",
                value: tail_prob_marginal(&doc.model, &subset, t.as_slice())?,
            }
        }
        ApproxQuery::Tail { .. } => bail!(InputError("give exactly one of --threshold or --marginal".into())),
        ApproxQuery::Quantile { p } => {
            let sum = doc.model.sum_cgf(&subset)?;
            let kappa = [sum.cumulant(1), sum.cumulant(2), sum.cumulant(3), sum.cumulant(4)];
            ApproxResult {
                method: "Cornish-Fisher quantile of S",
                value: cornish_fisher_quantile(kappa, p)?,
            }
        }
        ApproxQuery::Entropy => {
            // third cumulants of an elliptical model vanish
            let marginal = doc.model.marginal(&subset)?;
            let cov = marginal.gamma() * marginal.coeffs()[0];
            let k3 = CumulantTensor::zeros(subset.len(), 3);
            ApproxResult {
                method: "entropy",
                value: entropy_approx(&cov, &k3, EntropyWeights::default())?,
            }
        }
    };
    if cfg.json {
        print_json(&result)
    } else {
        println!("{}: {}", result.method, result.value);
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct LancasterResult {
    point: Option<Vec<f64>>,
    delta_f: Option<f64>,
    hoeffding: Option<f64>,
    sample_covariance: Option<f64>,
}

pub fn lancaster(cfg: &RunConfig, point: Option<String>, nodes: usize, tolerance: Option<f64>) -> Result<()> {
    let data = load_data(cfg)?;
    let j = data.ncols();
    let mut result = LancasterResult {
        point: None,
        delta_f: None,
        hoeffding: None,
        sample_covariance: None,
    };
    if let Some(p) = point {
        let x = parse_point(&p, j)?;
        let oracle = EmpiricalOracle::new(data.values.clone())?;
        result.delta_f = Some(lancaster_measure(&oracle, x.as_slice())?);
        result.point = Some(x.as_slice().to_vec());
    } else {
        if j != 2 {
            bail!(InputError(format!(
                "the Hoeffding integral needs exactly 2 columns, got {j}"
            )));
        }
        let pad = |a: f64, b: f64| 1e-6 * (b - a).abs().max(1.0);
        let lower: Vec<f64> = (0..2).map(|c| data.values.column(c).min()).collect();
        let upper: Vec<f64> = (0..2).map(|c| data.values.column(c).max()).collect();
        let (x, y) = (data.values.column(0), data.values.column(1));
        let grid = GridSpec {
            lower: lower.iter().zip(&upper).map(|(&a, &b)| a - pad(a, b)).collect(),
            upper: lower.iter().zip(&upper).map(|(&a, &b)| b + pad(a, b)).collect(),
            nodes: vec![nodes; 2],
            tolerance: tolerance.unwrap_or_else(|| 1e-2 * (x.variance() * y.variance()).sqrt()),
        };
        let n = data.nrows() as f64;
        let (mx, my) = (x.mean(), y.mean());
        result.sample_covariance = Some(x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n);
        let oracle = EmpiricalOracle::new(data.values.clone())?;
        result.hoeffding = Some(cumulant_via_lancaster_integral(&oracle, &grid)?);
    }
    if cfg.json {
        return print_json(&result);
    }
    if let Some(d) = result.delta_f {
        println!("Lancaster measure at {:?}: {d}", result.point.unwrap_or_default());
    }
    if let (Some(h), Some(s)) = (result.hoeffding, result.sample_covariance) {
        println!("Hoeffding covariance: {h}");
        println!("sample covariance (1/n): {s}");
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let doc = ModelDocument::load(&cfg.model_path())?;
    let report = validate_model(&doc.model);
    if cfg.json {
        print_json(&report)?;
    } else {
        println!("valid: {}", report.valid);
        for d in &report.diagnostics {
            println!("  {d}");
        }
    }
    if !report.valid {
        bail!(CgfError::InvalidModel(report.diagnostics.join("; ")));
    }
    Ok(())
}
