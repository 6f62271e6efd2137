//! `facestyle` command-line tool.
//!
//! Every stage reads and writes fixed file names inside `--out`, so a full
//! run is a sequence of subcommands over one directory.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use facestyle::ablation::ablate_sims;
use facestyle::checkpoint::Checkpoint;
use facestyle::config::RunConfig;
use facestyle::mesh::{SamplingStrategy, TriMesh};
use facestyle::morph::TopologyVariant;
use facestyle::pipeline::{self as pl, stage_seed};
use facestyle::render::{render_all, view_file_name, RenderRig};
use facestyle::stylize::{eval_metrics, interpolate, stylize};
use facestyle::train::StyleMode;

#[derive(Parser, Debug)]
#[command(name = "facestyle", version, about = "One-shot geometric stylization of 3D face meshes")]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory for inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Print the full default configuration as JSON and exit.
    #[arg(long)]
    print_config_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Morphable model archive (default: <out>/model.json).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Accept checkpoints whose fingerprint does not match the config.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the procedural morphable model.
    GenModel,
    /// Build the exemplar pair (identity mesh and its styled copy).
    GenExemplar {
        #[command(flatten)]
        m: ModelArgs,
        /// Style preset, overriding the config.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train the source deformation field.
    TrainDs {
        #[command(flatten)]
        m: ModelArgs,
        /// sims, hybrid or vertex (overrides the config).
        #[arg(long)]
        sampling: Option<String>,
    },
    /// Adapt the source field to the exemplar style.
    TrainDt {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        ds: Option<PathBuf>,
        /// pseudo or direct (overrides the config).
        #[arg(long)]
        style_mode: Option<String>,
    },
    /// Pretrain the point-set encoders and fit the mesh-agnostic encoder.
    TrainMage {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        ds: Option<PathBuf>,
    },
    /// Stylize a mesh of any topology onto a template of the desired topology.
    Stylize {
        #[command(flatten)]
        m: ModelArgs,
        /// Deformation target (OBJ).
        #[arg(long)]
        target: PathBuf,
        /// Desired template (OBJ); defaults to a remeshing of the model template.
        #[arg(long)]
        template: Option<PathBuf>,
        /// original, simplified, loop1 or loop2 (used without --template).
        #[arg(long, default_value = "original")]
        topology: String,
        #[arg(long)]
        dt: Option<PathBuf>,
        #[arg(long)]
        mage: Option<PathBuf>,
        /// Output file name inside --out.
        #[arg(long, default_value = "stylized.obj")]
        name: String,
    },
    /// Blend two stylized-field checkpoints: alpha·A + (1−alpha)·B.
    Interpolate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value = "blend.json")]
        name: String,
    },
    /// Render a mesh from every rig view to L{level}_V{view}.png.
    Render {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        mesh: PathBuf,
        /// Landmark sidecar; without it the rig is anchored on the model template.
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Style and identity similarity of a stylized mesh.
    Eval {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        stylized: PathBuf,
        /// Style exemplar (default: <out>/exemplar_style.obj).
        #[arg(long)]
        exemplar: Option<PathBuf>,
        #[arg(long)]
        target: PathBuf,
    },
    /// Train one source field per sampling strategy and seed; write ablation.csv.
    AblateSims {
        #[command(flatten)]
        m: ModelArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.print_config_schema {
        println!("{}", RunConfig::default().to_json_pretty());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    match run(&cli.config, cli.seed, &cli.out, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn or_out(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(config: &Option<PathBuf>, seed: u64, out: &Path, command: Command) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let morph = |m: &ModelArgs| {
        let p = or_out(&m.model, out, pl::MODEL_FILE);
        pl::load_morphable(&p).with_context(|| format!("loading morphable model {}", p.display()))
    };
    match command {
        Command::GenModel => {
            let m = pl::gen_model(&cfg, seed)?;
            pl::save_morphable(&m, &out.join(pl::MODEL_FILE), seed)?;
            m.template().write_obj(&out.join(pl::TEMPLATE_FILE))?;
            write(
                &out.join(pl::LANDMARKS_FILE),
                &facestyle::mesh::landmarks_to_json(m.template().landmarks()),
            )?;
        }
        Command::GenExemplar { m, preset } => {
            if let Some(p) = preset {
                cfg.exemplar.preset = p;
                cfg.exemplar.ops = None;
            }
            let ex = pl::make_exemplar(&cfg, &morph(&m)?, seed)?;
            pl::save_exemplar(&ex, out)?;
        }
        Command::TrainDs { m, sampling } => {
            if let Some(s) = sampling {
                cfg.train_ds.sampling = SamplingStrategy::parse(&s)?;
            }
            let mm = morph(&m)?;
            let (model, log) = pl::run_train_ds(&cfg, &mm, seed)?;
            pl::save_deform(&model, &out.join(pl::DS_FILE), stage_seed(seed, "ds.train"))?;
            write(&out.join("ds_loss.csv"), &log.to_csv())?;
        }
        Command::TrainDt { m, ds, style_mode } => {
            if let Some(s) = style_mode {
                cfg.train_dt.style_mode = StyleMode::parse(&s)?;
            }
            let mm = morph(&m)?;
            let ds = pl::load_deform(&cfg, &mm, &or_out(&ds, out, pl::DS_FILE), m.force)?;
            let ex = pl::load_exemplar(out).context("loading exemplar (run gen-exemplar first)")?;
            let (dt, log) = pl::run_train_dt(&cfg, &ds, &ex, &mm, seed)?;
            pl::save_deform(&dt, &out.join(pl::DT_FILE), stage_seed(seed, "dt.train"))?;
            write(&out.join("dt_loss.csv"), &log.to_csv())?;
        }
        Command::TrainMage { m, ds } => {
            let mm = morph(&m)?;
            let ds = pl::load_deform(&cfg, &mm, &or_out(&ds, out, pl::DS_FILE), m.force)?;
            let (mage, pre, log) = pl::run_train_mage(&cfg, &ds, &mm, seed)?;
            pl::save_mage(&mage, &out.join(pl::MAGE_FILE), stage_seed(seed, "mage.train"))?;
            write(&out.join("mage_pretrain_loss.csv"), &pre.to_csv())?;
            write(&out.join("mage_loss.csv"), &log.to_csv())?;
        }
        Command::Stylize {
            m,
            target,
            template,
            topology,
            dt,
            mage,
            name,
        } => {
            let mm = morph(&m)?;
            let dt_path = or_out(&dt, out, pl::DT_FILE);
            let mage_path = or_out(&mage, out, pl::MAGE_FILE);
            for p in [&dt_path, &mage_path] {
                if !p.exists() {
                    bail!("missing checkpoint {}", p.display());
                }
            }
            let dt = pl::load_deform(&cfg, &mm, &dt_path, m.force)?;
            let mage = pl::load_mage(&cfg, &mm, &mage_path, m.force)?;
            let target = TriMesh::read_obj(&target)?;
            let tmpl = match template {
                Some(p) => TriMesh::read_obj(&p)?,
                None => mm.variant(TopologyVariant::parse(&topology)?)?.mesh,
            };
            stylize(&target, &mage, &dt, &tmpl)?.write_obj(&out.join(name))?;
        }
        Command::Interpolate { a, b, alpha, name } => {
            let ca = Checkpoint::load(&a, None, false)?;
            let cb = Checkpoint::load(&b, None, false)?;
            interpolate(&ca, &cb, alpha)?.save(&out.join(name))?;
        }
        Command::Render { m, mesh, landmarks } => {
            let mesh = TriMesh::read_obj_with_landmarks(&mesh, landmarks.as_deref())?;
            let anchor = if landmarks.is_some() { mesh.clone() } else { morph(&m)?.template().clone() };
            let rig = RenderRig::build(&anchor, &cfg.rig)?;
            for (l, v, img) in render_all(&mesh, &rig, &cfg.render)? {
                img.write_png(&out.join(view_file_name(l, v)))?;
            }
        }
        Command::Eval {
            m,
            stylized,
            exemplar,
            target,
        } => {
            let mm = morph(&m)?;
            let space = pl::semantic_space(&cfg, mm.template())?;
            let style = TriMesh::read_obj(&or_out(&exemplar, out, pl::EXEMPLAR_STYLE_FILE))?;
            let metrics = eval_metrics(
                &TriMesh::read_obj(&stylized)?,
                &style,
                &TriMesh::read_obj(&target)?,
                &space,
            )?;
            let json = serde_json::to_string_pretty(&metrics)?;
            println!("{json}");
            write(&out.join("metrics.json"), &json)?;
        }
        Command::AblateSims { m } => {
            let mm = morph(&m)?;
            let table = ablate_sims(&mm, &cfg.deform, &cfg.ablation, stage_seed(seed, "ablation.eval"))?;
            let csv = table.to_csv();
            print!("{csv}");
            write(&out.join("ablation.csv"), &csv)?;
        }
    }
    Ok(())
}
