use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use csrtomo::cdl;
use csrtomo::image::write_image;
use csrtomo::pnp::save_patch_dictionary;
use csrtomo::tomo::save_sinogram;
use csrtomo_cli::experiment::{self as exp, Cell};
use csrtomo_cli::{ConfigError, ExperimentConfig, Method, ViewSpec};

/// Convolutional sparse representation regularized tomography experiments.
#[derive(Parser, Debug)]
#[command(name = "csrtomo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// INI configuration file applied on top of the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// View cells, `N` or `N:lo:hi` in degrees; comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    views: Vec<ViewSpec>,
    /// Projection-domain noise PSNRs in dB; comma separated.
    #[arg(long = "noise-db", global = true, value_delimiter = ',')]
    noise_db: Vec<f64>,
    /// Reconstruction methods (mrf, psc, csc1, csc2, csc3); comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<Method>,
    /// Convolutional dictionary file to use instead of training one.
    #[arg(long, global = true)]
    dict: Option<PathBuf>,
    /// Patch dictionary file to use instead of training one.
    #[arg(long = "patch-dict", global = true)]
    patch_dict: Option<PathBuf>,
    /// 256² images, 128 filters and 300 outer iterations.
    #[arg(long = "paper-scale", global = true)]
    paper_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a phantom image (`.pgm` or `.imgf` by extension).
    Phantom {
        /// Phantom index; defaults to the held-out test phantom.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value = "phantom.imgf")]
        file: String,
    },
    /// Project the test phantom and add noise; writes one sinogram per cell.
    Simulate,
    /// Learn the convolutional dictionary.
    TrainDict {
        /// Train on the `.pgm`/`.imgf` images in this directory instead of phantoms.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Learn the patch dictionary of the PSC baseline.
    TrainPatchDict,
    /// Run the denoising table.
    Denoise,
    /// Run the reconstruction table.
    Reconstruct,
    /// Run the denoising and reconstruction tables.
    Table,
}

fn build_config(c: &Common) -> Result<ExperimentConfig, ConfigError> {
    let base = if c.paper_scale {
        ExperimentConfig::paper_scale()
    } else {
        ExperimentConfig::desk()
    };
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_ini_file(path, base)?,
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if !c.views.is_empty() {
        cfg.cells = c.views.clone();
    }
    if !c.noise_db.is_empty() {
        cfg.noise_db = c.noise_db.clone();
    }
    if !c.method.is_empty() {
        cfg.methods = c.method.clone();
    }
    if c.dict.is_some() {
        cfg.dict_path = c.dict.clone();
    }
    if c.patch_dict.is_some() {
        cfg.patch_dict_path = c.patch_dict.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn recon(cfg: &ExperimentConfig) -> Result<()> {
    let dict = match cfg.csc_method() {
        Some(_) => Some(exp::obtain_dictionary(cfg)?),
        None => None,
    };
    let pdict = match cfg.methods.contains(&Method::Psc) {
        true => Some(exp::obtain_patch_dictionary(cfg)?),
        false => None,
    };
    for row in exp::run_recon_table(cfg, dict.as_deref(), pdict.as_ref())? {
        let scores: Vec<String> = row.results.iter().map(|r| format!("{} {:.2}", r.method, r.psnr)).collect();
        println!(
            "{} views [{}, {}] at {} dB: fbp {:.2}, {}",
            row.view.views,
            row.view.lo_deg,
            row.view.hi_deg,
            row.noise_db,
            row.fbp,
            scores.join(", ")
        );
    }
    Ok(())
}

fn denoise(cfg: &ExperimentConfig) -> Result<()> {
    let dict = exp::obtain_dictionary(cfg)?;
    for row in exp::run_denoise_table(cfg, &dict)? {
        println!(
            "input {:.2} dB: csc1 {:.2}, csc2 {:.2}, csc3 {:.2}",
            row.input_psnr, row.best[0], row.best[1], row.best[2]
        );
    }
    Ok(())
}

fn run(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    match command {
        Command::Phantom { index, file } => {
            let img = exp::phantom(cfg, index.unwrap_or(cfg.train_count))?;
            let path = cfg.out_dir.join(file);
            write_image(&img, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Simulate => {
            let truth = exp::held_out_phantom(cfg)?;
            write_image(&truth, &cfg.out_dir.join("truth.imgf"))?;
            for view in &cfg.cells {
                for &db in &cfg.noise_db {
                    let cell = Cell::new(cfg, &truth, view, db)?;
                    let path = cfg
                        .out_dir
                        .join(format!("sino_v{}_{}-{}_n{db}.sino", view.views, view.lo_deg, view.hi_deg));
                    save_sinogram(&cell.y, &path)?;
                    println!("wrote {} (fbp {:.2} dB)", path.display(), cell.psnr(&cell.fbp()?)?);
                }
            }
        }
        Command::TrainDict { corpus } => {
            let (dict, prov) = match corpus {
                Some(dir) => exp::train_dictionary_on(cfg, &exp::corpus(&dir, cfg.lambda_lpf)?)?,
                None => exp::train_dictionary(cfg)?,
            };
            let path = cfg.out_dir.join("dictionary.cdict");
            cdl::save_dictionary(&dict, &prov, &path)?;
            println!("wrote {} ({} filters)", path.display(), dict.len());
        }
        Command::TrainPatchDict => {
            let dict = exp::train_patch_dictionary(cfg)?;
            let path = cfg.out_dir.join("patch_dictionary.pdict");
            save_patch_dictionary(&dict, &path)?;
            println!("wrote {} ({} atoms)", path.display(), dict.len());
        }
        Command::Denoise => denoise(cfg)?,
        Command::Reconstruct => recon(cfg)?,
        Command::Table => {
            denoise(cfg)?;
            // the table reuses the dictionary trained by the denoising step
            let mut cfg = cfg.clone();
            if cfg.dict_path.is_none() {
                cfg.dict_path = Some(cfg.out_dir.join("dictionary.cdict"));
            }
            recon(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match build_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
