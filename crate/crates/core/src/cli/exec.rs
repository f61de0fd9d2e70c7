//! Executes a resolved [`RunSpec`] into an output directory and returns the
//! files it wrote (relative names, in write order).

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::*;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv, write_json, write_text};
use crate::nnlab::{
    block_dominance, exact_hessian_small, generate_cluster_data, generate_cluster_split, heterogeneity_experiment,
    load_idx, train_with_callback, Dataset, HessianOperator, Mlp, MlpSpec, Model, OneHiddenBinary, TrainerSpec,
};
use crate::operator::{block_restrict, BlockPartition, DenseSymmetric, Diagonal, SymmetricOperator};
use crate::quadlab::{
    build_case, compute_r, detect_limit_cycle, gd_lower_bound_instance, load_eigenvalue_list, run_adam, run_gd,
    scalar_instance, verify_adam_upper_bound, verify_gd_lower_bound, Case, QuadraticProblem, StepSize, CASE3_SPECTRA,
    CASE4_SPECTRA,
};
use crate::seed::derive_seed;
use crate::slq::{export_density, slq_density, slq_simplified, ProbeConfig};
use crate::spectra::{heterogeneity_report_auto, GridSpec, SpectralDensity};

/// Collects output file names while writing them.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.files.push(name);
        p
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: String, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn text(&mut self, name: String, text: &str) -> Result<()> {
        let p = self.path(name);
        write_text(&p, text)
    }
}

pub fn execute(spec: &RunSpec, out_dir: &Path) -> Result<Vec<String>> {
    spec.validate()?;
    let mut out = Outputs::new(out_dir);
    match spec {
        RunSpec::Slq(c) => run_slq(c, &mut out)?,
        RunSpec::Heatmap(c) => run_heatmap(c, &mut out)?,
        RunSpec::Quad(c) => run_quad(c, &mut out)?,
        RunSpec::MlpBlockdiag(c) => run_blockdiag(c, &mut out)?,
        RunSpec::MlpScaling(c) => run_scaling(c, &mut out)?,
        RunSpec::MlpSlqNet(c) => run_slq_net(c, &mut out)?,
    }
    Ok(out.files)
}

// ---------------------------------------------------------------- operators

struct Resolved {
    op: Box<dyn SymmetricOperator>,
    partition: Option<BlockPartition>,
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, spec: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::invalid(format!("bad {what} {s:?} in operator spec {spec:?}")))
}

/// Block spectra of Case 3 or 4 with every eigenvalue repeated `mult` times.
pub fn case_style_spectra(case: Case, mult: usize) -> Result<Vec<Vec<f64>>> {
    let table = match case {
        Case::Case3 => CASE3_SPECTRA,
        Case::Case4 => CASE4_SPECTRA,
        _ => return Err(Error::invalid("eigenvalue multiplicity applies to cases 3 and 4 only")),
    };
    Ok(table
        .iter()
        .map(|b| b.iter().flat_map(|&x| std::iter::repeat_n(x, mult)).collect())
        .collect())
}

fn synthetic(spec: &str, seed: u64) -> Result<Resolved> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["linspace", lo, hi, n] => {
            let lo: f64 = parse_num(lo, "lower end", spec)?;
            let hi: f64 = parse_num(hi, "upper end", spec)?;
            let n: usize = parse_num(n, "size", spec)?;
            if n == 0 {
                return Err(Error::invalid(format!("operator spec {spec:?} has size 0")));
            }
            let diag = (0..n)
                .map(|i| {
                    if n == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    }
                })
                .collect();
            Ok(Resolved {
                op: Box::new(Diagonal(diag)),
                partition: None,
            })
        }
        ["case", k] | ["case", k, _] => {
            let case = Case::from_id(parse_num(k, "case", spec)?)?;
            let p = if let [_, _, mult] = parts.as_slice() {
                let mult: usize = parse_num(mult, "multiplicity", spec)?;
                if mult == 0 {
                    return Err(Error::invalid("multiplicity must be positive"));
                }
                QuadraticProblem::from_block_spectra(
                    format!("case {}", case.id()),
                    &case_style_spectra(case, mult)?,
                    seed,
                    Default::default(),
                )?
            } else {
                build_case(case, seed, Default::default())?
            };
            let partition = p.partition().clone();
            Ok(Resolved {
                op: Box::new(p.hessian().clone()),
                partition: Some(partition),
            })
        }
        _ => Err(Error::invalid(format!(
            "unknown operator spec {spec:?} (expected linspace:LO:HI:N or case:K[:MULT])"
        ))),
    }
}

fn resolve_source(src: &OperatorSource, seed: u64) -> Result<Resolved> {
    let mut r = match (&src.matrix, &src.synthetic) {
        (Some(_), Some(_)) => {
            return Err(Error::invalid(
                "give either a matrix file or a synthetic operator, not both",
            ))
        }
        (Some(path), None) => Resolved {
            op: Box::new(DenseSymmetric::load_csv(path)?),
            partition: None,
        },
        (None, Some(spec)) => synthetic(spec, seed)?,
        (None, None) => return Err(Error::invalid("no operator given (matrix file or synthetic spec)")),
    };
    if let Some(path) = &src.partition {
        r.partition = Some(BlockPartition::load_json(path)?);
    }
    Ok(r)
}

// ---------------------------------------------------------------------- slq

fn run_slq(c: &SlqRun, out: &mut Outputs) -> Result<()> {
    if let Some(s) = c.sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {s}")));
        }
    }
    let r = resolve_source(&c.source, c.seed)?;
    let probes = ProbeConfig::new(c.num_probes, c.m, c.seed)
        .with_distribution(c.probe)
        .with_reorthogonalize(c.reorth);
    let density = match c.block {
        Some(l) => {
            let part = r
                .partition
                .as_ref()
                .ok_or_else(|| Error::invalid("--block needs a partition"))?;
            let sub = block_restrict(r.op.as_ref(), part, l)?;
            slq_density(&sub, &probes, c.sigma)?.with_label(format!("block {l}"))
        }
        None => slq_density(r.op.as_ref(), &probes, c.sigma)?.with_label(c.name.clone()),
    };
    let grid = match c.grid_points {
        Some(n) => GridSpec::covering_with_points(&[&density], n)?,
        None => GridSpec::covering(&[&density])?,
    };
    let csv = out.path(format!("{}.csv", c.name));
    out.files.push(format!("{}.json", c.name));
    export_density(&density, &grid, &csv)
}

// ------------------------------------------------------------------ heatmap

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".manifest.json"))
}

/// Every `*.json` file of `dir` except manifests, sorted by file name.
pub fn load_density_dir(dir: &Path) -> Result<Vec<SpectralDensity>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json") && !is_manifest(p));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let d: SpectralDensity = serde_json::from_str(&text).map_err(|e| Error::parse(p, e.to_string()))?;
            if d.rules.is_empty() || !(d.sigma > 0.0) {
                return Err(Error::parse(
                    p,
                    "density has no quadrature rules or a non-positive sigma",
                ));
            }
            let label = if d.label.is_empty() {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            } else {
                d.label.clone()
            };
            Ok(d.with_label(label))
        })
        .collect()
}

fn run_heatmap(c: &HeatmapRun, out: &mut Outputs) -> Result<()> {
    let mut densities = match (&c.densities, c.source.is_set()) {
        (Some(_), true) => {
            return Err(Error::invalid(
                "give either a density directory or an operator, not both",
            ))
        }
        (Some(dir), false) => load_density_dir(dir)?,
        (None, true) => {
            let r = resolve_source(&c.source, c.seed)?;
            let part = r
                .partition
                .ok_or_else(|| Error::invalid("a heatmap over an operator needs a block partition"))?;
            let (m, n) = match c.simplified {
                Some(_) => (c.m.unwrap_or(10), c.num_probes.unwrap_or(1)),
                None => (c.m.unwrap_or(100), c.num_probes.unwrap_or(10)),
            };
            let probes = ProbeConfig::new(n, m, c.seed).with_distribution(c.probe);
            let fraction = c.simplified.unwrap_or(1.0);
            slq_simplified(r.op.as_ref(), &part, fraction, &probes)?
                .into_iter()
                .map(|(_, d)| d)
                .collect()
        }
        (None, false) => return Err(Error::invalid("no densities given (directory or operator)")),
    };
    if densities.len() < 2 {
        return Err(Error::invalid(format!(
            "a heatmap needs at least 2 densities, found {}",
            densities.len()
        )));
    }
    if c.normalize_10th {
        densities = densities.iter().map(|d| d.normalize_axis(10)).collect::<Result<_>>()?;
    }
    let report = heterogeneity_report_auto(&densities)?;
    out.text(format!("{}.csv", c.name), &report.to_csv())?;
    out.json(format!("{}.json", c.name), &report)?;
    println!("js0 = {}", fmt_f64(report.js0));
    Ok(())
}

// --------------------------------------------------------------------- quad

fn quad_problem(c: &QuadRun) -> Result<(QuadraticProblem, Vec<f64>)> {
    if !c.spectra.is_empty() {
        let spectra = c.spectra.iter().map(load_eigenvalue_list).collect::<Result<Vec<_>>>()?;
        let p = QuadraticProblem::from_block_spectra("spectra files", &spectra, c.seed, c.q)?;
        let w0 = p.gaussian_init(c.seed);
        return Ok((p, w0));
    }
    match c.case.as_str() {
        "d1" => gd_lower_bound_instance(c.kappa),
        "scalar" => Ok((scalar_instance(), vec![1.0])),
        id => {
            let id: u32 = id
                .parse()
                .map_err(|_| Error::invalid(format!("unknown case {id:?} (expected 1, 2, 3, 4, d1 or scalar)")))?;
            let p = build_case(Case::from_id(id)?, c.seed, c.q)?;
            let w0 = p.gaussian_init(c.seed);
            Ok((p, w0))
        }
    }
}

fn run_quad(c: &QuadRun, out: &mut Outputs) -> Result<()> {
    match (c.verify, c.optimizer) {
        (Some(Verify::Prop1), QuadOptimizer::Adam) => {
            return Err(Error::invalid(
                "--verify prop1 checks gradient descent; use --optimizer gd",
            ))
        }
        (Some(Verify::Thm1 | Verify::Prop2), QuadOptimizer::Gd) => {
            return Err(Error::invalid("--verify thm1/prop2 check Adam; use --optimizer adam"))
        }
        (Some(Verify::Thm1), _) if c.beta2 != 1.0 => return Err(Error::invalid("--verify thm1 needs --beta2 1")),
        (Some(Verify::Prop2), _) if c.beta2 >= 1.0 => {
            return Err(Error::invalid("--verify prop2 needs --beta2 below 1"))
        }
        _ => {}
    }
    let (p, w0) = quad_problem(c)?;
    let traj = match c.optimizer {
        QuadOptimizer::Gd => {
            let step = match c.eta {
                EtaSetting::Auto => StepSize::Auto,
                EtaSetting::Value(x) => StepSize::Fixed(x),
            };
            run_gd(&p, step, c.steps, &w0)?
        }
        QuadOptimizer::Adam => {
            let eta = match c.eta {
                EtaSetting::Auto => compute_r(&p, &w0)?.eta(),
                EtaSetting::Value(x) => x,
            };
            run_adam(&p, eta, c.beta2, c.steps, &w0)?
        }
    }
    .with_seed(c.seed);
    let csv = out.path(format!("{}.csv", c.name));
    traj.write_csv(&csv)?;
    if traj.diverged {
        eprintln!("warning: trajectory diverged and was stopped early");
    }
    match c.verify {
        Some(Verify::Prop1) => {
            let r = verify_gd_lower_bound(&traj, p.kappa())?;
            println!("bound satisfied: {}", r.satisfied);
            println!("equality with bound: {}", r.equality_with_bound);
            out.json(format!("{}.theory.json", c.name), &r)?;
        }
        Some(Verify::Thm1) => {
            let r = verify_adam_upper_bound(&p, &w0, &traj)?;
            println!("bound satisfied: {}", r.satisfied);
            println!("verdict: {}", r.verdict);
            out.json(format!("{}.theory.json", c.name), &r)?;
        }
        Some(Verify::Prop2) => {
            let r = detect_limit_cycle(&traj)?;
            println!("non-converged: {}", r.non_converged);
            out.json(format!("{}.theory.json", c.name), &r)?;
        }
        None => {}
    }
    Ok(())
}

// ---------------------------------------------------------------------- mlp

fn cluster(d: &ClusterData) -> Result<Dataset> {
    generate_cluster_data(d.n_per_class, d.n_classes, d.dim, d.seed)
}

#[derive(Serialize)]
struct BlockdiagSummary {
    num_params: usize,
    block_labels: Vec<String>,
    initial_dominance: f64,
    final_dominance: f64,
    dominance_increased: bool,
    /// Largest relative Frobenius error of the analytic cross-neuron blocks
    /// against the finite-difference Hessian at initialization.
    cross_block_max_rel_error: f64,
    final_train_accuracy: f64,
}

fn run_blockdiag(c: &BlockdiagRun, out: &mut Outputs) -> Result<()> {
    let data = cluster(&c.data)?;
    if data.n_classes > 2 {
        return Err(Error::invalid(
            "blockdiag uses the binary model; set data.n_classes = 2",
        ));
    }
    let model = OneHiddenBinary::new(c.data.dim, c.width, c.activation)?;
    let w0 = model.init_params(c.seed);
    let mut spec = TrainerSpec::new(c.optimizer, c.lr, c.steps, c.seed);
    spec.eval_every = c.record_every;

    let h0 = exact_hessian_small(&model, &data, &w0)?;
    let dim = c.data.dim;
    let mut worst: f64 = 0.0;
    for i in 0..c.width {
        for j in 0..c.width {
            if i != j {
                let got = crate::nnlab::off_diagonal_block(&h0, i * dim..(i + 1) * dim, j * dim..(j + 1) * dim);
                let want = model.cross_neuron_block(&data, &w0, i, j)?;
                worst = worst.max(crate::nnlab::relative_frobenius(&got, want.as_row_major()));
            }
        }
    }

    let mut dominance = Vec::new();
    let result = train_with_callback(&model, &data, &w0, &spec, |step, w| {
        let h = if step == 0 {
            h0.clone()
        } else {
            exact_hessian_small(&model, &data, w)?
        };
        dominance.push((step, block_dominance(&h, model.partition())?));
        Ok(())
    })?;
    let rows = dominance
        .iter()
        .zip(&result.evals)
        .map(|(&(step, dom), e)| vec![step as f64, dom, e.loss, e.accuracy]);
    let csv = out.path(format!("{}.csv", c.name));
    write_csv(&csv, &["step", "dominance", "train_loss", "train_accuracy"], rows)?;
    let initial = dominance[0].1;
    let last = dominance.last().expect("initial point recorded").1;
    let summary = BlockdiagSummary {
        num_params: model.num_params(),
        block_labels: model.block_labels(),
        initial_dominance: initial,
        final_dominance: last,
        dominance_increased: last > initial,
        cross_block_max_rel_error: worst,
        final_train_accuracy: result.final_eval().accuracy,
    };
    println!("dominance {} -> {}", fmt_f64(initial), fmt_f64(last));
    out.json(format!("{}.json", c.name), &summary)
}

fn run_scaling(c: &ScalingRun, out: &mut Outputs) -> Result<()> {
    let (train, test) = match &c.idx {
        Some(f) => (
            load_idx(&f.train_images, &f.train_labels)?,
            load_idx(&f.test_images, &f.test_labels)?,
        ),
        None => generate_cluster_split(
            c.data.n_train_per_class,
            c.data.n_test_per_class,
            c.data.n_classes,
            c.data.dim,
            c.data.seed,
        )?,
    };
    let table = heterogeneity_experiment(&c.experiment, &train, &test)?;
    let csv = out.path(format!("{}.csv", c.name));
    out.files.push(format!("{}.json", c.name));
    print!("{}", table.to_csv());
    table.export(&csv)
}

fn run_slq_net(c: &SlqNetRun, out: &mut Outputs) -> Result<()> {
    let data = cluster(&c.data)?;
    let model: Box<dyn Model> = match c.model {
        NetKind::Binary => {
            let [width] = c.hidden.as_slice() else {
                return Err(Error::invalid("the binary model takes exactly one hidden width"));
            };
            if c.scale != 1.0 {
                return Err(Error::invalid("the binary model has no layer scale"));
            }
            Box::new(OneHiddenBinary::new(c.data.dim, *width, c.activation)?)
        }
        NetKind::Mlp => {
            let mut widths = vec![c.data.dim];
            widths.extend(&c.hidden);
            widths.push(c.data.n_classes);
            Box::new(Mlp::new(MlpSpec {
                widths,
                activation: c.activation,
                scale: c.scale,
            })?)
        }
    };
    let mut w = model.init_params(c.seed);
    if c.train_steps > 0 {
        let spec = TrainerSpec::new(c.optimizer, c.lr, c.train_steps, c.seed);
        w = crate::nnlab::train(model.as_ref(), &data, &w, &spec)?.w;
    }
    let h = HessianOperator::new(model.as_ref(), &data, &w)?;
    let part = model.partition();
    let labels = model.block_labels();
    let mut densities = Vec::with_capacity(part.num_blocks());
    for l in 1..=part.num_blocks() {
        let sub = block_restrict(&h, part, l)?;
        let probes = ProbeConfig::new(c.num_probes, c.m, derive_seed(c.seed, "block", l as u64));
        let d = slq_density(&sub, &probes, None)?.with_label(labels[l - 1].clone());
        let grid = GridSpec::covering(&[&d])?;
        let csv = out.path(format!("{}.block{l}.csv", c.name));
        out.files.push(format!("{}.block{l}.json", c.name));
        export_density(&d, &grid, &csv)?;
        densities.push(d);
    }
    let report = heterogeneity_report_auto(&densities)?;
    out.text(format!("{}.csv", c.name), &report.to_csv())?;
    out.json(format!("{}.json", c.name), &report)?;
    println!("js0 = {}", fmt_f64(report.js0));
    Ok(())
}
