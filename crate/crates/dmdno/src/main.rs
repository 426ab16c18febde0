//! Experiment runner: dataset generation, training, evaluation, DMD
//! inspection, baseline comparison and the error-bound check, glued together
//! by a JSON experiment config. Every command leaves a manifest with input
//! and output checksums next to its outputs.

use clap::{Parser, Subcommand};
use dmdno::config::{ExperimentConfig, RunManifest};
use dmdno::dmd::encode_branch_inputs;
use dmdno::error::{Error, Result};
use dmdno::model::{load_checkpoint, save_checkpoint};
use dmdno::pde::{
    cfl_number, generate_burgers, generate_heat, generate_laplace, load_dataset, save_dataset,
    Dataset, Equation,
};
use dmdno::train::{
    build_train_data, check_bound, evaluate, train, LossHistory, TrainOutcome,
};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "dmdno", about = "DMD-enhanced neural operator experiments", version)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config seed (generation and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset per the config and write it as a DMDNODS1 file.
    Generate,
    /// Train the operator on a dataset; writes checkpoint and loss CSV.
    Train { dataset: PathBuf },
    /// Evaluate a checkpoint: metrics CSV plus prediction/truth/error grids.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Number of test samples to export field grids for.
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Export one sample's DMD modes, eigenvalues and amplitudes as CSV.
    Dmd {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Train the DMD-enhanced model and the plain baseline side by side.
    Compare { dataset: PathBuf },
    /// Empirically check the truncation term of the error bound.
    CheckBound {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Generate => cmd_generate(cli),
        Cmd::Train { dataset } => cmd_train(cli, dataset),
        Cmd::Eval { checkpoint, dataset, samples } => cmd_eval(cli, checkpoint, dataset, *samples),
        Cmd::Dmd { dataset, sample } => cmd_dmd(cli, dataset, *sample),
        Cmd::Compare { dataset } => cmd_compare(cli, dataset),
        Cmd::CheckBound { checkpoint, dataset, trials } => {
            cmd_check_bound(cli, checkpoint, dataset, *trials)
        }
    }
}

/// Load the config, apply CLI overrides, and ensure the output dir exists.
fn setup(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

/// Fallback setup for commands where a config is optional: checkpoint- or
/// dataset-driven commands run fine on defaults.
fn setup_optional(cli: &Cli, equation: Equation) -> Result<(ExperimentConfig, PathBuf)> {
    if cli.config.is_some() {
        return setup(cli);
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&format!(r#"{{"equation": "{}"}}"#, equation.name()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn info(cli: &Cli, msg: &str) {
    if !cli.quiet {
        println!("{msg}");
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text.as_bytes())?;
    Ok(())
}

/// Full-precision float formatting shared by every CSV writer.
fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn loss_csv(history: &LossHistory) -> String {
    let mut s = String::from("epoch,train_loss,test_loss\n");
    for (e, tr, te) in &history.rows {
        let _ = writeln!(s, "{e},{},{}", f(*tr), f(*te));
    }
    s
}

fn check_dataset_matches(cfg: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    let eq = cfg.equation()?;
    if ds.equation != eq {
        return Err(Error::InvalidInput(format!(
            "dataset holds {} data but the config says {}",
            ds.equation.name(),
            eq.name()
        )));
    }
    Ok(())
}

fn cmd_generate(cli: &Cli) -> Result<()> {
    let (cfg, out) = setup(cli)?;
    let mut manifest = RunManifest::new("generate", &cfg)?;
    let t0 = Instant::now();

    let eq = cfg.equation()?;
    let grid = cfg.grid()?;
    let g = &cfg.generator;
    if eq == Equation::Heat {
        let c = cfl_number(cfg.alpha(), cfg.dt()?, grid.dx, grid.dy);
        if c > 0.5 {
            eprintln!("CFL violated: {c:.2} > 0.5");
        }
    }
    let dataset = match eq {
        Equation::Laplace => generate_laplace(g.n_samples, grid, g.steps, cfg.seed)?,
        Equation::Heat => {
            generate_heat(g.n_samples, grid, g.steps, cfg.alpha(), cfg.dt()?, cfg.seed)?
        }
        Equation::Burgers => generate_burgers(g.n_samples, grid, g.steps, cfg.dt()?, cfg.seed)?,
    };
    manifest.timings_ms.insert("generate".into(), t0.elapsed().as_millis() as u64);

    let path = out.join(format!("{}-dataset.bin", eq.name()));
    save_dataset(&dataset, &path)?;
    manifest.record_output(&path)?;
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    info(cli, &format!("wrote {} samples to {}", dataset.samples.len(), path.display()));
    Ok(())
}

fn run_training(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    baseline: bool,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.baseline = baseline;
    let spec = cfg.build_spec(dataset)?;
    train(dataset, &spec, &cfg.train)
}

fn cmd_train(cli: &Cli, dataset_path: &Path) -> Result<()> {
    let (cfg, out) = setup(cli)?;
    let mut manifest = RunManifest::new("train", &cfg)?;
    manifest.record_input(dataset_path)?;
    let t0 = Instant::now();

    let dataset = load_dataset(dataset_path)?;
    check_dataset_matches(&cfg, &dataset)?;
    let outcome = run_training(&cfg, &dataset, cfg.baseline)?;
    manifest.timings_ms.insert("train".into(), t0.elapsed().as_millis() as u64);

    let ckpt_path = out.join("checkpoint.bin");
    save_checkpoint(&outcome.spec, &outcome.params, &ckpt_path)?;
    let loss_path = out.join("loss.csv");
    write_text(&loss_path, &loss_csv(&outcome.history))?;
    manifest.record_output(&ckpt_path)?;
    manifest.record_output(&loss_path)?;
    if let Some((e, tr, te)) = outcome.history.rows.last() {
        manifest.metrics = Some(serde_json::json!({
            "last_logged_epoch": e, "train_loss": tr, "test_loss": te,
        }));
        info(cli, &format!("epoch {e}: train {tr:.6} test {te:.6}"));
    }
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    info(cli, &format!("wrote {} and {}", ckpt_path.display(), loss_path.display()));
    Ok(())
}

fn cmd_eval(cli: &Cli, ckpt_path: &Path, dataset_path: &Path, k: usize) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    let (cfg, out) = setup_optional(cli, dataset.equation)?;
    check_dataset_matches(&cfg, &dataset)?;
    let mut manifest = RunManifest::new("eval", &cfg)?;
    manifest.record_input(ckpt_path)?;
    manifest.record_input(dataset_path)?;
    let t0 = Instant::now();

    let (spec, params) = load_checkpoint(ckpt_path)?;
    if spec.condition_len() != dataset.samples[0].condition.len()
        || spec.out_channels != dataset.equation.channels()
    {
        return Err(Error::InvalidInput(format!(
            "checkpoint expects condition length {} / {} channels, dataset has {} / {}",
            spec.condition_len(),
            spec.out_channels,
            dataset.samples[0].condition.len(),
            dataset.equation.channels()
        )));
    }
    // Same split parameters as training, so the test split is the one the
    // model never saw.
    let data = build_train_data(
        &dataset,
        spec.dmd_branches_enabled,
        cfg.train.train_fraction,
        cfg.train.seed,
    )?;
    let report = evaluate(&spec, &params, &data, &data.test_samples)?;

    let mut csv = String::from("channel,mse,rel_l2,max_abs,zero_norm\n");
    for (i, ch) in report.per_channel.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{}", f(ch.mse), f(ch.rel_l2), f(ch.max_abs), ch.zero_norm);
    }
    let a = &report.aggregate;
    let _ = writeln!(csv, "all,{},{},{},{}", f(a.mse), f(a.rel_l2), f(a.max_abs), a.zero_norm);
    let metrics_path = out.join("metrics.csv");
    write_text(&metrics_path, &csv)?;
    manifest.record_output(&metrics_path)?;

    // Per exported test sample and channel: prediction, truth and absolute
    // error as nx×ny grids (row per x index).
    let mut exported = data.test_samples.clone();
    exported.sort_unstable();
    exported.truncate(k);
    let (nx, ny) = (dataset.grid.nx, dataset.grid.ny);
    for &s in &exported {
        let inputs = data.sample_inputs(s);
        for channel in 0..spec.out_channels {
            let mut grids = [String::new(), String::new(), String::new()];
            for i in 0..nx {
                let mut rows = [Vec::new(), Vec::new(), Vec::new()];
                for j in 0..ny {
                    let point = i * ny + j;
                    let pred = dmdno::model::operator_forward(
                        &spec,
                        &params,
                        &inputs,
                        &data.coords[point],
                    )?[channel];
                    let truth = data.target(s, point, channel);
                    rows[0].push(f(pred));
                    rows[1].push(f(truth));
                    rows[2].push(f((pred - truth).abs()));
                }
                for (g, r) in grids.iter_mut().zip(&rows) {
                    let _ = writeln!(g, "{}", r.join(","));
                }
            }
            for (kind, grid) in ["prediction", "truth", "abs_error"].iter().zip(&grids) {
                let path = out.join(format!("{kind}-s{s}-c{channel}.csv"));
                write_text(&path, grid)?;
                manifest.record_output(&path)?;
            }
        }
    }

    manifest.metrics = Some(serde_json::to_value(&report)?);
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    info(
        cli,
        &format!(
            "aggregate mse {:.6e}, rel_l2 {:.6e}; grids for {} test samples in {}",
            a.mse,
            a.rel_l2,
            exported.len(),
            out.display()
        ),
    );
    Ok(())
}

fn cmd_dmd(cli: &Cli, dataset_path: &Path, sample: usize) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    let (cfg, out) = setup_optional(cli, dataset.equation)?;
    let mut manifest = RunManifest::new("dmd", &cfg)?;
    manifest.record_input(dataset_path)?;
    let t0 = Instant::now();

    if sample >= dataset.samples.len() {
        return Err(Error::InvalidInput(format!(
            "sample index {sample} out of range (dataset has {})",
            dataset.samples.len()
        )));
    }
    let dec = &dataset.samples[sample].dmd;
    let enc = encode_branch_inputs(dec);
    let n = dec.modes.rows();

    let mut csv = String::from("eig_re,eig_im,eig_abs,amp_re,amp_im");
    for i in 0..n {
        let _ = write!(csv, ",mode_{i}_re,mode_{i}_im");
    }
    csv.push('\n');
    for k in 0..dec.rank {
        let lam = dec.eigenvalues[k];
        let b = dec.amplitudes[k];
        let _ = write!(csv, "{},{},{},{},{}", f(lam.re), f(lam.im), f(lam.norm()), f(b.re), f(b.im));
        // Mode entries straight from the branch encoding layout.
        let block = &enc.mode_vec[2 * n * k..2 * n * (k + 1)];
        for i in 0..n {
            let _ = write!(csv, ",{},{}", f(block[i]), f(block[n + i]));
        }
        csv.push('\n');
    }
    let path = out.join(format!("dmd-s{sample}.csv"));
    write_text(&path, &csv)?;
    manifest.record_output(&path)?;
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    info(cli, &format!("wrote {} ({} modes)", path.display(), dec.rank));
    Ok(())
}

fn cmd_compare(cli: &Cli, dataset_path: &Path) -> Result<()> {
    let (cfg, out) = setup(cli)?;
    let mut manifest = RunManifest::new("compare", &cfg)?;
    manifest.record_input(dataset_path)?;
    let t0 = Instant::now();

    let dataset = load_dataset(dataset_path)?;
    check_dataset_matches(&cfg, &dataset)?;
    // Identical seeds and split; the baseline differs only in its disabled
    // DMD branches (shared nets start from identical weights by stream id).
    let dmdno_run = run_training(&cfg, &dataset, false)?;
    manifest.timings_ms.insert("train_dmdno".into(), t0.elapsed().as_millis() as u64);
    let t1 = Instant::now();
    let baseline_run = run_training(&cfg, &dataset, true)?;
    manifest.timings_ms.insert("train_deeponet".into(), t1.elapsed().as_millis() as u64);

    let mut csv = String::from("epoch,dmdno_train,dmdno_test,deeponet_train,deeponet_test\n");
    for ((e, tr, te), (e2, tr2, te2)) in
        dmdno_run.history.rows.iter().zip(&baseline_run.history.rows)
    {
        debug_assert_eq!(e, e2);
        let _ = writeln!(csv, "{e},{},{},{},{}", f(*tr), f(*te), f(*tr2), f(*te2));
    }
    let path = out.join("compare.csv");
    write_text(&path, &csv)?;
    manifest.record_output(&path)?;
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    info(cli, &format!("wrote {}", path.display()));
    Ok(())
}

fn cmd_check_bound(cli: &Cli, ckpt_path: &Path, dataset_path: &Path, trials: usize) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    let (cfg, out) = setup_optional(cli, dataset.equation)?;
    check_dataset_matches(&cfg, &dataset)?;
    let mut manifest = RunManifest::new("check-bound", &cfg)?;
    manifest.record_input(ckpt_path)?;
    manifest.record_input(dataset_path)?;
    let t0 = Instant::now();

    let (spec, params) = load_checkpoint(ckpt_path)?;
    let data = build_train_data(
        &dataset,
        spec.dmd_branches_enabled,
        cfg.train.train_fraction,
        cfg.train.seed,
    )?;
    let rank = cfg.dmd.rank.unwrap_or(dataset.params.dmd_rank);
    let report = check_bound(&spec, &params, &dataset, &data, rank, trials, cfg.seed)?;

    let mut csv = String::from("sample,epsilon,lhs,l_hat,bound,satisfied\n");
    for t in &report.trials {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            t.sample,
            f(t.epsilon),
            f(t.lhs),
            f(t.l_hat),
            f(t.bound),
            t.satisfied
        );
    }
    let path = out.join("bound.csv");
    write_text(&path, &csv)?;
    manifest.record_output(&path)?;
    manifest.metrics = Some(serde_json::json!({
        "trials": report.trials.len(), "violations": report.violations,
    }));
    manifest.timings_ms.insert("total".into(), t0.elapsed().as_millis() as u64);
    manifest.write(&out)?;
    println!("bound check: {} violations in {} trials", report.violations, report.trials.len());
    Ok(())
}
