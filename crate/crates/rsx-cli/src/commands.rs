//! The four subcommands. Each returns a process exit code on success and
//! lets errors bubble to main, where they map to codes by failure class.

use std::fmt::Write as _;
use std::path::Path;

use rsx::builder::{assemble, expected_digit_checksum, extend_linf};
use rsx::eval::{forward, EvalPath, ExactEvaluator};
use rsx::grid::{in_trifling_region, Hyperparams};
use rsx::net::{audit_architecture, Network, StructureTags};
use rsx::serial::{load_network, save_network, BuildMeta};
use rsx::target::TargetFunction;
use rsx::verify::{
    check_linf_bound, check_lp_bound, check_pointwise_bound, estimate_modulus, ErrorReport,
    ModulusDescriptor,
};
use rsx::{Error, Result};

use crate::config::{Mode, RunConfig};

pub fn cmd_synthesize(config: &RunConfig, out_dir: &Path) -> Result<i32> {
    let f = config.target_fn()?;
    let (params, notes) = config.resolve_params()?;
    for note in &notes {
        eprintln!("note: {note}");
    }
    let net = match config.mode {
        Mode::Linf => extend_linf(&f, &params)?,
        Mode::OffRegion | Mode::Lp => assemble(&f, &params)?,
    };
    let arch = audit_architecture(&net);
    std::fs::create_dir_all(out_dir)?;
    let meta = BuildMeta {
        hyperparams: Some(params.clone()),
        target: Some(config.target.clone()),
    };
    let path = out_dir.join("weights.json");
    save_network(&net, &meta, &path)?;
    println!(
        "wrote {} (target {}, d={}, N={}, M={}, delta={}, depth {}, width {})",
        path.display(),
        config.target,
        params.d(),
        params.n(),
        params.m(),
        params.delta(),
        arch.depth,
        arch.width
    );
    Ok(0)
}

/// How the stored network relates to the run config: the resolved sizes and
/// the digit table must both match, or the file belongs to a different run.
fn check_consistency(
    net: &Network,
    manifest_params: Option<&Hyperparams>,
    f: &TargetFunction,
    params: &Hyperparams,
    mode: Mode,
) -> Result<()> {
    let extended = matches!(net.tags, StructureTags::Extended(_));
    if (mode == Mode::Linf) != extended {
        return Err(Error::Config(if extended {
            "this weight file holds a whole-cube extension; use linf mode".into()
        } else {
            "linf mode expects a whole-cube extension, but this weight file holds a base network"
                .into()
        }));
    }
    if let Some(h) = manifest_params {
        if h != params {
            return Err(Error::Config(
                "the weight file was built with different sizes than this config resolves to"
                    .into(),
            ));
        }
    }
    let layout = net
        .tags
        .symbolic_layout()
        .ok_or_else(|| Error::Config("this weight file carries no digit table to verify".into()))?;
    let fresh = expected_digit_checksum(f, params, extended)?;
    if fresh != layout.digit_checksum {
        return Err(Error::Config(
            "the target no longer produces the digit table stored in the weight file".into(),
        ));
    }
    Ok(())
}

fn modulus_for(f: &TargetFunction, params: &Hyperparams, seed: u64) -> Result<ModulusDescriptor> {
    if let Some(h) = f.holder {
        return Ok(ModulusDescriptor::Holder(h));
    }
    eprintln!(
        "warning: target carries no smoothness certificate; checking against an empirical \
         modulus (advisory only)"
    );
    let sd = (params.d() as f64).sqrt();
    let mut radii = vec![sd / 16.0, sd / 8.0, sd / 4.0, sd / 2.0, sd];
    let cell = sd / params.n() as f64;
    if cell > 0.0 {
        radii.push(cell);
    }
    if params.delta() > 0.0 {
        radii.push(params.delta().min(sd));
    }
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    radii.dedup();
    estimate_modulus(f, &radii, 300, seed)
}

fn default_density(d: usize) -> usize {
    match d {
        1 => 1001,
        2 => 101,
        3 => 21,
        _ => 9,
    }
}

fn csv_density(d: usize) -> usize {
    match d {
        1 => 1001,
        2 => 45,
        3 => 12,
        _ => 6,
    }
}

/// Sweep a uniform grid over the cube and write one row per point: the
/// coordinates, target value, network value, absolute error, and whether
/// the point falls in the excluded slabs.
fn write_samples_csv(
    f: &TargetFunction,
    net: &Network,
    params: &Hyperparams,
    density: usize,
    out: &Path,
) -> Result<usize> {
    let d = params.d();
    if density < 2 {
        return Err(Error::Config(format!(
            "the sample grid needs at least 2 points per axis, got {density}"
        )));
    }
    let total = (density as u64).checked_pow(d as u32).unwrap_or(u64::MAX);
    if total > 1_000_000 {
        return Err(Error::Config(format!(
            "a {density}^{d} sample grid is {total} rows; cap is 1000000"
        )));
    }
    let mut eval = ExactEvaluator::new(net)?;
    let mut text = String::new();
    for i in 1..=d {
        let _ = write!(text, "x{i},");
    }
    text.push_str("f,phi,abs_err,in_omega\n");
    let step = 1.0 / (density - 1) as f64;
    let mut idx = vec![0usize; d];
    let mut rows = 0usize;
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| (i as f64 * step).min(1.0)).collect();
        let want = f.eval(&x);
        let got = eval.eval(&x)?.value;
        let omega = in_trifling_region(&x, params)?;
        for v in &x {
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "{want},{got},{},{}", (got - want).abs(), u8::from(omega));
        rows += 1;
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < density {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    std::fs::write(out, text)?;
    Ok(rows)
}

fn write_report_json(report: &ErrorReport, out: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(out, text)?;
    Ok(())
}

pub fn cmd_verify(
    config: &RunConfig,
    weights: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    samples: Option<u64>,
    grid: Option<usize>,
) -> Result<i32> {
    let (net, manifest) = load_network(weights)?;
    let f = config.target_fn()?;
    let (params, _) = config.resolve_params()?;
    check_consistency(&net, manifest.hyperparams.as_ref(), &f, &params, config.mode)?;

    let seed = seed.or(config.seed).unwrap_or(0);
    let samples = samples.or(config.samples).unwrap_or(100_000);
    let density = grid.or(config.grid).unwrap_or_else(|| default_density(params.d()));
    let modulus = modulus_for(&f, &params, seed)?;

    let report = match config.mode {
        Mode::OffRegion => check_pointwise_bound(&f, &net, &params, &modulus, density)?,
        Mode::Lp => check_lp_bound(&f, &net, &params, &modulus, samples, seed)?,
        Mode::Linf => check_linf_bound(&f, &net, &params, &modulus, density)?,
    };

    std::fs::create_dir_all(out_dir)?;
    let report_path = out_dir.join("report.json");
    write_report_json(&report, &report_path)?;
    let csv_path = out_dir.join("samples.csv");
    let csv_d = grid.or(config.grid).unwrap_or_else(|| csv_density(params.d()));
    let rows = write_samples_csv(&f, &net, &params, csv_d, &csv_path)?;

    let measured = report
        .sup_err_off_region
        .or(report.linf_err)
        .or(report.lp_err.as_ref().map(|e| e.estimate))
        .unwrap_or(f64::NAN);
    println!(
        "wrote {} and {} ({rows} samples)",
        report_path.display(),
        csv_path.display()
    );
    println!(
        "measured error {measured:.3e} against bound {:.3e} over {} points",
        report.theoretical_bound, report.n_samples
    );
    for note in &report.notes {
        println!("note: {note}");
    }
    if report.passed {
        println!("PASS");
        Ok(0)
    } else if report.advisory {
        eprintln!("warning: advisory check failed; the empirical modulus may undershoot");
        println!("PASS (advisory)");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(1)
    }
}

pub fn cmd_eval(weights: &Path, points: &Path, path_name: &str) -> Result<i32> {
    let path: EvalPath = path_name.parse()?;
    let (net, _) = load_network(weights)?;
    let text = std::fs::read_to_string(points)
        .map_err(|e| Error::Config(format!("cannot read points file {}: {e}", points.display())))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut x = Vec::with_capacity(net.input_dim);
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| {
                Error::Config(format!("points file line {}: {tok:?} is not a number", i + 1))
            })?;
            x.push(v);
        }
        if x.len() != net.input_dim {
            return Err(Error::Config(format!(
                "points file line {}: got {} coordinates, network takes {}",
                i + 1,
                x.len(),
                net.input_dim
            )));
        }
        let out = forward(&net, &x, path)
            .map_err(|e| Error::Config(format!("points file line {}: {e}", i + 1)))?;
        if out.overflow {
            println!("inf (overflow)");
        } else {
            println!("{}", out.value);
        }
    }
    Ok(0)
}

pub fn cmd_report(
    config: &RunConfig,
    weights: &Path,
    out_dir: &Path,
    grid: Option<usize>,
) -> Result<i32> {
    let (net, manifest) = load_network(weights)?;
    let f = config.target_fn()?;
    let (params, _) = config.resolve_params()?;
    check_consistency(&net, manifest.hyperparams.as_ref(), &f, &params, config.mode)?;
    let density = grid.or(config.grid).unwrap_or_else(|| csv_density(params.d()));
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("samples.csv");
    let rows = write_samples_csv(&f, &net, &params, density, &csv_path)?;
    println!("wrote {} ({rows} samples)", csv_path.display());
    Ok(0)
}
