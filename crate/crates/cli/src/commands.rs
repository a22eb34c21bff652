//! Subcommand implementations.

use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use mbot::bounds::{
    fit_loglog_slope, marginal_bound, run_marginal_experiment, write_marginal_csv,
    write_records_csv, DeviationExperiment, GeneratorSpec,
};
use mbot::gradients::{gradient_flow, FlowConfig};
use mbot::io::{read_cloud_csv, write_points_csv};
use mbot::minibatch::{ot_loss, plan_averaged_exact, plan_subsampled, u_stat_exact, u_stat_subsampled};
use mbot::plan::{format_float, write_csv_triplets, write_dense_binary};
use mbot::sinkhorn::sinkhorn_value_streaming;
use mbot::transfer::{incremental_transfer, load_image, save_image, Normalization};
use mbot::{
    sinkhorn, solve_exact_assignment, CostSpec, DiscreteDistribution,
    LossKind, MinibatchConfig, SinkhornParams, SparsePlan,
};

use crate::output::{json_to_string, write_json, RunContext};
use crate::{
    BenchArgs, Cli, ColorArgs, CostArg, EvalArgs, ExperimentArg, FlowArgs, LossArg, NormArg,
    PlanArgs, RateArgs, SolverArg, TableFormat,
};

impl LossArg {
    fn kind(self) -> LossKind {
        match self {
            LossArg::W => LossKind::W,
            LossArg::WEps => LossKind::WEps,
            LossArg::SEps => LossKind::SEps,
        }
    }
}

impl CostArg {
    fn spec(self) -> CostSpec {
        match self {
            CostArg::Abs => CostSpec::abs(),
            CostArg::Euclidean => CostSpec::euclidean(),
            CostArg::SqEuclidean => CostSpec::sq_euclidean(),
        }
    }
}

impl NormArg {
    fn mode(self) -> Normalization {
        match self {
            NormArg::GlobalScale => Normalization::GlobalScale,
            NormArg::PerPixelMass => Normalization::PerPixelMass,
        }
    }
}

/// Load a point cloud from coordinate CSV or from an image (pixels as RGB
/// points).
fn load_cloud(path: &Path) -> Result<DiscreteDistribution> {
    let cloud = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_cloud_csv(path)?,
        Some("png") | Some("ppm") => load_image(path)?.as_distribution(),
        _ => bail!(
            "{}: unsupported input (expected .csv coordinates or a .png/.ppm image)",
            path.display()
        ),
    };
    Ok(cloud)
}

fn sinkhorn_params(eps: f64, tol: f64, max_iters: usize) -> SinkhornParams {
    SinkhornParams::new(eps).with_tol(tol).with_max_iters(max_iters)
}

/// Largest support a full dense solve is allowed on (cost matrix memory).
const FULL_SOLVE_CAP: usize = 20_000;

pub fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "eval")?;
    let a = load_cloud(&args.source)?;
    let b = load_cloud(&args.target)?;
    let cost = args.cost.spec();
    let loss = args.loss.kind();
    let params = sinkhorn_params(args.eps, args.sinkhorn_tol, args.sinkhorn_max_iters);

    let (value, m_used, k_used, solver_stats) = match (args.m, args.k, args.exact) {
        (None, None, _) => {
            // full-distribution loss
            if a.n().max(b.n()) > FULL_SOLVE_CAP {
                bail!(
                    "full evaluation on {} points needs an n x n solve; pass --m/--k instead",
                    a.n().max(b.n())
                );
            }
            let stats = match loss {
                LossKind::WEps => {
                    let res = sinkhorn(&a, &b, &cost, &params)?;
                    json!({
                        "path": "full",
                        "converged": res.converged,
                        "iterations": res.iterations,
                        "residual": res.residual,
                    })
                }
                _ => json!({"path": "full"}),
            };
            (ot_loss(&a, &b, &cost, loss, &params)?, a.n(), Value::Null, stats)
        }
        (Some(m), _, true) => {
            let mut cfg = MinibatchConfig::wasserstein(m, 1, cli.seed);
            cfg.loss = loss;
            cfg.sinkhorn = params;
            let value = u_stat_exact(&a, &b, &cost, &cfg)?;
            (value, m, Value::Null, json!({"path": "exact_enumeration"}))
        }
        (Some(m), Some(k), false) => {
            let mut cfg = MinibatchConfig::wasserstein(m, k, cli.seed);
            cfg.loss = loss;
            cfg.sinkhorn = params;
            let (value, per_draw) = u_stat_subsampled(&a, &b, &cost, &cfg)?;
            let mean = value;
            let var = per_draw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (per_draw.len().max(2) - 1) as f64;
            (
                value,
                m,
                json!(k),
                json!({"path": "subsampled", "per_draw_std": var.sqrt()}),
            )
        }
        (Some(_), None, false) => bail!("--m needs either --exact or --k"),
        (None, Some(_), _) => bail!("--k needs --m"),
    };

    let result = json!({
        "value": value,
        "loss": loss.name(),
        "cost": cost.kind.name(),
        "n": a.n(),
        "m": m_used,
        "k": k_used,
        "seed": cli.seed,
        "solver_stats": solver_stats,
    });
    println!("{}", json_to_string(&result)?);
    let path = run.output("eval.json");
    write_json(&path, &result)?;
    run.finish()
}

fn plan_summary(plan: &SparsePlan, delta: f64) -> Value {
    let n_rows = plan.n_rows();
    let n_cols = plan.n_cols();
    let target_row = 1.0 / n_rows as f64;
    let target_col = 1.0 / n_cols as f64;
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let max_row_dev = rows.iter().map(|s| (s - target_row).abs()).fold(0.0, f64::max);
    let max_col_dev = cols.iter().map(|s| (s - target_col).abs()).fold(0.0, f64::max);
    let mean_l1_row = rows.iter().map(|s| (s - target_row).abs()).sum::<f64>() / n_rows as f64;
    let mean_l1_col = cols.iter().map(|s| (s - target_col).abs()).sum::<f64>() / n_cols as f64;
    let bound = marginal_bound(plan.draws.max(1), delta);
    let within = rows.iter().filter(|s| (*s - target_row).abs() <= bound).count()
        + cols.iter().filter(|s| (*s - target_col).abs() <= bound).count();
    json!({
        "n": n_rows,
        "draws": plan.draws,
        "nonzeros": plan.nnz(),
        "total_mass": plan.total_mass(),
        "max_row_dev": max_row_dev,
        "max_col_dev": max_col_dev,
        "mean_l1_row": mean_l1_row,
        "mean_l1_col": mean_l1_col,
        "marginal_bound_delta": delta,
        "marginal_bound": bound,
        "within_bound_frac": within as f64 / (n_rows + n_cols) as f64,
    })
}

fn write_plan_files(
    run: &mut RunContext,
    stem: &str,
    plan: &SparsePlan,
    binary: bool,
) -> Result<()> {
    let csv_path = run.output(&format!("{stem}.csv"));
    let mut w = BufWriter::new(std::fs::File::create(&csv_path)?);
    write_csv_triplets(&mut w, plan)?;
    if binary {
        let dense = plan.to_dense(100_000_000)?;
        let bin_path = run.output(&format!("{stem}.bin"));
        let mut w = BufWriter::new(std::fs::File::create(&bin_path)?);
        write_dense_binary(&mut w, plan.n_rows(), &dense, 0)?;
    }
    Ok(())
}

pub fn plan(cli: &Cli, args: &PlanArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "plan")?;
    let modes = args.closed_form_1d as u8 + args.enumerate as u8 + args.subsample as u8;
    if modes != 1 {
        bail!("pick exactly one of --closed-form-1d, --enumerate, --subsample");
    }
    let mut summaries = Vec::new();

    if args.closed_form_1d {
        let n = args.n.context("--closed-form-1d needs --n")?;
        for &m in &args.m {
            let dense = mbot::closed_form::closed_form_1d(n, m)?;
            // densely computed but exported through the same sparse layout
            let mut sp = SparsePlan::new(n, n);
            let plan = mbot::TransportPlan::from_entries(n, dense.clone(), 0.0);
            let idx: Vec<usize> = (0..n).collect();
            sp.accumulate(&plan, &idx, &idx, 1.0);
            let stem = format!("plan_closed_n{n}_m{m}");
            if args.binary {
                let bin_path = run.output(&format!("{stem}.bin"));
                let mut w = BufWriter::new(std::fs::File::create(&bin_path)?);
                write_dense_binary(&mut w, n, &dense, 0)?;
            }
            let csv_path = run.output(&format!("{stem}.csv"));
            let mut w = BufWriter::new(std::fs::File::create(&csv_path)?);
            write_csv_triplets(&mut w, &sp)?;
            let mut summary = plan_summary(&sp, 0.1);
            summary["m"] = json!(m);
            summary["kind"] = json!("closed_form_1d");
            summaries.push(summary);
        }
    } else {
        let source = args.source.as_ref().context("input clouds required")?;
        let target = args.target.as_ref().context("input clouds required")?;
        let a = load_cloud(source)?;
        let b = load_cloud(target)?;
        if args.m.len() != 1 {
            bail!("--enumerate/--subsample take exactly one --m");
        }
        let m = args.m[0];
        let cost = args.cost.spec();
        let k = args.k.unwrap_or(100);
        let mut cfg = MinibatchConfig::wasserstein(m, k, cli.seed);
        cfg.loss = args.loss.kind();
        cfg.sinkhorn = SinkhornParams::new(args.eps);
        let (sp, kind, stem) = if args.enumerate {
            (
                plan_averaged_exact(&a, &b, &cost, &cfg)?,
                "enumerated",
                format!("plan_enumerated_m{m}"),
            )
        } else {
            (
                plan_subsampled(&a, &b, &cost, &cfg)?,
                "subsampled",
                format!("plan_subsampled_m{m}_k{k}"),
            )
        };
        write_plan_files(&mut run, &stem, &sp, args.binary)?;
        let mut summary = plan_summary(&sp, 0.1);
        summary["m"] = json!(m);
        summary["kind"] = json!(kind);
        summaries.push(summary);
    }

    let report = Value::Array(summaries);
    println!("{}", json_to_string(&report)?);
    let path = run.output("marginals.json");
    write_json(&path, &report)?;
    run.finish()
}

pub fn rate(cli: &Cli, args: &RateArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "rate")?;
    match args.experiment {
        ExperimentArg::Deviation => {
            let grid: Vec<(usize, usize, u64)> = args
                .n_list
                .iter()
                .flat_map(|&n| {
                    args.m_list.iter().flat_map(move |&m| {
                        args.k_list.iter().map(move |&k| (n, m, k))
                    })
                })
                .collect();
            let exp = DeviationExperiment {
                loss: args.loss.kind(),
                sinkhorn: SinkhornParams::new(args.eps),
                delta: args.delta,
                reps: args.reps,
                seed: cli.seed,
                ..DeviationExperiment::new(
                    GeneratorSpec::Uniform { dim: args.dim },
                    args.cost.spec(),
                    grid,
                )
            };
            let records = exp.run()?;
            match cli.format {
                TableFormat::Csv => {
                    let path = run.output("deviation.csv");
                    let mut w = BufWriter::new(std::fs::File::create(&path)?);
                    write_records_csv(&mut w, &records)?;
                }
                TableFormat::Json => {
                    let rows: Vec<Value> = records
                        .iter()
                        .map(|r| {
                            json!({
                                "n": r.n, "m": r.m, "k": r.k, "rep": r.rep, "seed": r.seed,
                                "estimate": r.estimate, "reference": r.reference,
                                "abs_error": r.abs_error, "bound": r.bound,
                                "within_bound": r.within_bound,
                            })
                        })
                        .collect();
                    let path = run.output("deviation.json");
                    write_json(&path, &Value::Array(rows))?;
                }
            }
            // fitted slope of the mean error vs k, per (n, m)
            let mut slopes = Vec::new();
            for &n in &args.n_list {
                for &m in &args.m_list {
                    let mut points = Vec::new();
                    let mut coverage = Vec::new();
                    for &k in &args.k_list {
                        let sel: Vec<_> = records
                            .iter()
                            .filter(|r| r.n == n && r.m == m && r.k == k)
                            .collect();
                        let mean =
                            sel.iter().map(|r| r.abs_error).sum::<f64>() / sel.len() as f64;
                        let cov = sel.iter().filter(|r| r.within_bound).count() as f64
                            / sel.len() as f64;
                        points.push((k as f64, mean));
                        coverage.push(json!({"k": k, "coverage": cov}));
                    }
                    slopes.push(json!({
                        "n": n,
                        "m": m,
                        "slope": if points.len() >= 2 { json!(fit_loglog_slope(&points)) } else { Value::Null },
                        "coverage": coverage,
                    }));
                }
            }
            let report = json!({"experiment": "deviation", "delta": args.delta, "slopes": slopes});
            println!("{}", json_to_string(&report)?);
            let path = run.output("slopes.json");
            write_json(&path, &report)?;
        }
        ExperimentArg::Marginal => {
            let n = args.n;
            let cloud = DiscreteDistribution::from_1d(
                (0..n).map(|i| i as f64 / n as f64).collect(),
            )?;
            let result = run_marginal_experiment(
                &cloud,
                &cloud,
                &args.cost.spec(),
                &args.m_list,
                &args.k_list,
                args.reps,
                cli.seed,
                args.delta,
            )?;
            let (records, slopes) = (result.records, result.slopes);
            match cli.format {
                TableFormat::Csv => {
                    let path = run.output("marginal.csv");
                    let mut w = BufWriter::new(std::fs::File::create(&path)?);
                    write_marginal_csv(&mut w, &records)?;
                }
                TableFormat::Json => {
                    let rows: Vec<Value> = records
                        .iter()
                        .map(|r| {
                            json!({
                                "m": r.m, "k": r.k, "rep": r.rep, "seed": r.seed,
                                "mean_l1_row": r.mean_l1_row, "mean_l1_col": r.mean_l1_col,
                                "max_row_dev": r.max_row_dev, "max_col_dev": r.max_col_dev,
                                "within_bound_frac": r.within_bound_frac,
                            })
                        })
                        .collect();
                    let path = run.output("marginal.json");
                    write_json(&path, &Value::Array(rows))?;
                }
            }
            let slope_rows: Vec<Value> = slopes
                .iter()
                .map(|&(m, s)| json!({"m": m, "slope": s}))
                .collect();
            let report = json!({
                "experiment": "marginal",
                "n": n,
                "delta": args.delta,
                "slopes": slope_rows,
            });
            println!("{}", json_to_string(&report)?);
            let path = run.output("slopes.json");
            write_json(&path, &report)?;
        }
    }
    run.finish()
}

pub fn flow(cli: &Cli, args: &FlowArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "flow")?;
    let moving = load_cloud(&args.source)?;
    let target = load_cloud(&args.target)?;
    let mut cfg = MinibatchConfig::wasserstein(args.m, args.k, cli.seed);
    cfg.loss = args.loss.kind();
    cfg.sinkhorn = SinkhornParams::new(args.eps);
    let fc = FlowConfig {
        step_size: args.step_size,
        iters: args.steps,
        cfg,
        record_every: args.record_every,
        bias_correction: !args.no_bias_correction,
    };
    let traj = gradient_flow(&moving, &target, &args.cost.spec(), &fc)?;

    for (step, points) in &traj.snapshots {
        let path = run.output(&format!("snapshot_{step:06}.csv"));
        let mut w = BufWriter::new(std::fs::File::create(&path)?);
        write_points_csv(&mut w, points, moving.dim())?;
    }
    let trace_path = run.output("loss_trace.csv");
    let mut w = BufWriter::new(std::fs::File::create(&trace_path)?);
    use std::io::Write;
    writeln!(w, "step,loss")?;
    for (step, loss) in traj.loss_trace.iter().enumerate() {
        writeln!(w, "{},{}", step, format_float(*loss))?;
    }
    drop(w);

    let report = json!({
        "steps": args.steps,
        "initial_loss": traj.loss_trace.first(),
        "final_loss": traj.loss_trace.last(),
        "snapshots": traj.snapshots.len(),
    });
    println!("{}", json_to_string(&report)?);
    run.finish()
}

pub fn color(cli: &Cli, args: &ColorArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "color")?;
    let img1 = load_image(&args.image1)?;
    let img2 = load_image(&args.image2)?;
    let mut cfg = MinibatchConfig::wasserstein(args.m, args.k, cli.seed);
    cfg.loss = args.loss.kind();
    cfg.sinkhorn = SinkhornParams::new(args.eps);
    let out =
        incremental_transfer(&img1, &img2, &args.cost.spec(), &cfg, args.normalization.mode())?;

    let stem = |p: &Path| {
        p.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string()
    };
    let ext = |p: &Path| {
        p.extension()
            .and_then(|s| s.to_str())
            .unwrap_or("png")
            .to_string()
    };
    let (s1, s2) = (stem(&args.image1), stem(&args.image2));
    let fwd = run.output(&format!("{s1}_to_{s2}.{}", ext(&args.image1)));
    save_image(&out.src_mapped, &fwd)?;
    let bwd = run.output(&format!("{s2}_to_{s1}.{}", ext(&args.image2)));
    save_image(&out.tgt_mapped, &bwd)?;

    if args.mass_csv {
        use std::io::Write;
        for (name, mass) in [(format!("mass_{s1}.csv"), &out.src_mass), (format!("mass_{s2}.csv"), &out.tgt_mass)]
        {
            let path = run.output(&name);
            let mut w = BufWriter::new(std::fs::File::create(&path)?);
            writeln!(w, "pixel_index,mass")?;
            for (i, m) in mass.iter().enumerate() {
                writeln!(w, "{},{}", i, format_float(*m))?;
            }
        }
    }

    let stats = json!({
        "n_source": img1.n(),
        "n_target": img2.n(),
        "m": args.m,
        "k": args.k,
        "normalization": args.normalization.mode().name(),
        "source_uncovered": out.src_uncovered,
        "target_uncovered": out.tgt_uncovered,
        "source_covered_frac": 1.0 - out.src_uncovered as f64 / img1.n() as f64,
        "target_covered_frac": 1.0 - out.tgt_uncovered as f64 / img2.n() as f64,
    });
    println!("{}", json_to_string(&stats)?);
    run.set_stats(stats);
    run.finish()
}

pub fn bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let mut run = RunContext::new(cli.out_dir.clone(), cli.seed, "bench")?;
    let cost = CostSpec::sq_euclidean();
    let mut rows: Vec<(String, usize, u32, f64)> = Vec::new();
    for &n in &args.n_list {
        let a = GeneratorSpec::Uniform { dim: args.dim }
            .generate(&mut mbot::rng::stream_rng(cli.seed, 1), n);
        let b = GeneratorSpec::Uniform { dim: args.dim }
            .generate(&mut mbot::rng::stream_rng(cli.seed, 2), n);
        for &solver in &args.solvers {
            if solver == SolverArg::Exact && n > 4000 {
                bail!("exact solver benchmark refuses n > 4000 (O(n^3) solve); got {n}");
            }
            for rep in 0..args.reps {
                let start = Instant::now();
                match solver {
                    SolverArg::MbW => {
                        let cfg = MinibatchConfig::wasserstein(args.m, args.k, cli.seed + rep as u64);
                        std::hint::black_box(u_stat_subsampled(&a, &b, &cost, &cfg)?.0);
                    }
                    SolverArg::MbSinkhorn => {
                        let cfg = MinibatchConfig::entropic(
                            args.m,
                            args.k,
                            cli.seed + rep as u64,
                            SinkhornParams::new(args.eps),
                        );
                        std::hint::black_box(u_stat_subsampled(&a, &b, &cost, &cfg)?.0);
                    }
                    SolverArg::Sinkhorn => {
                        std::hint::black_box(sinkhorn_value_streaming(
                            &a,
                            &b,
                            &cost,
                            args.eps,
                            args.sinkhorn_iters,
                        )?);
                    }
                    SolverArg::Exact => {
                        std::hint::black_box(solve_exact_assignment(&a, &b, &cost)?.0);
                    }
                }
                let name = match solver {
                    SolverArg::MbW => "mb_w",
                    SolverArg::MbSinkhorn => "mb_sinkhorn",
                    SolverArg::Sinkhorn => "sinkhorn",
                    SolverArg::Exact => "exact",
                };
                rows.push((name.to_string(), n, rep, start.elapsed().as_secs_f64()));
            }
        }
    }
    match cli.format {
        TableFormat::Csv => {
            use std::io::Write;
            let path = run.output("timing.csv");
            let mut w = BufWriter::new(std::fs::File::create(&path)?);
            writeln!(w, "solver,n,rep,seconds")?;
            for (solver, n, rep, secs) in &rows {
                writeln!(w, "{},{},{},{}", solver, n, rep, format_float(*secs))?;
            }
        }
        TableFormat::Json => {
            let vals: Vec<Value> = rows
                .iter()
                .map(|(solver, n, rep, secs)| {
                    json!({"solver": solver, "n": n, "rep": rep, "seconds": secs})
                })
                .collect();
            let path = run.output("timing.json");
            write_json(&path, &Value::Array(vals))?;
        }
    }
    // per (solver, n) best-of-reps summary to stdout
    let mut summary = Vec::new();
    for &solver in &args.solvers {
        let name = match solver {
            SolverArg::MbW => "mb_w",
            SolverArg::MbSinkhorn => "mb_sinkhorn",
            SolverArg::Sinkhorn => "sinkhorn",
            SolverArg::Exact => "exact",
        };
        for &n in &args.n_list {
            let best = rows
                .iter()
                .filter(|(s, rn, _, _)| s == name && *rn == n)
                .map(|(_, _, _, secs)| *secs)
                .fold(f64::INFINITY, f64::min);
            summary.push(json!({"solver": name, "n": n, "best_seconds": best}));
        }
    }
    let report = Value::Array(summary);
    println!("{}", json_to_string(&report)?);
    run.finish()
}
