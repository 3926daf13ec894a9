use std::path::{Path, PathBuf};

use super::artifacts::{read_dataset, sha256_hex, write_dataset, Manifest};
use super::config::{EvalMode, RunConfig};
use super::ppm::write_ppm;
use crate::attack::{
    creation_carrier, initial_perturbation, optimize_creation, optimize_disappearance, read_delta_dump,
    write_delta_dump, write_trace_csv, AttackOutcome, PerturbationSpec,
};
use crate::error::{Error, Result};
use crate::evalharness::{eval_creation, eval_disappearance, eval_transfer, write_report, EvalReport, ReportFormat};
use crate::minidet::{train_toy, DetectorModel};
use crate::rng::Pcg32;
use crate::scenegen::{render_backgrounds, render_placements, render_sweep, synth_dataset, CanonicalObject};

/// Stream of the dataset generator.
pub const DATA_STREAM: u64 = 0x6461_7461;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    GenData,
    Train,
    AttackDisappear,
    AttackCreate,
    Eval,
    Transfer,
    Render,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::AttackDisappear => "attack-disappear",
            Command::AttackCreate => "attack-create",
            Command::Eval => "eval",
            Command::Transfer => "transfer",
            Command::Render => "render",
        }
    }
}

struct Run<'a> {
    out: &'a Path,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn input(&self, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = given.clone().unwrap_or_else(|| self.out.join(default));
        if !p.is_file() {
            return Err(Error::invalid(format!("missing input {}", p.display())));
        }
        Ok(p)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    }

    fn report(&mut self, stem: &str, report: &EvalReport) -> Result<()> {
        let csv = self.path(&format!("{stem}.csv"));
        write_report(report, &csv, ReportFormat::Csv)?;
        let json = self.path(&format!("{stem}.json"));
        write_report(report, &json, ReportFormat::Json)
    }

    fn perturbation(&mut self, outcome: &AttackOutcome, object: &CanonicalObject, stem: &str) -> Result<()> {
        write_delta_dump(&outcome.spec, &self.path(&format!("{stem}.pert")))?;
        write_ppm(&outcome.spec.apply_to(&object.image)?, &self.path(&format!("{stem}.ppm")))?;
        write_ppm(&outcome.spec.mask, &self.path(&format!("{stem}_mask.ppm")))?;
        write_trace_csv(&outcome.trace, &self.path(&format!("{stem}_trace.csv")))
    }
}

fn epoch_log(what: &'static str) -> impl FnMut(&crate::attack::TraceRow, &PerturbationSpec) {
    move |row, _| {
        if row.epoch % 25 == 0 {
            eprintln!(
                "{what} epoch {} J {:.6} TV {:.6} NPS {:.6} total {:.6}",
                row.epoch, row.j, row.tv, row.nps, row.total
            );
        }
    }
}

/// Runs `command` into `out`, writing its artifacts and
/// `<command>.manifest.json`. Summary lines go to standard output.
pub fn run(command: Command, config: &RunConfig, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_json = config.to_json();
    eprintln!("{} config:\n{config_json}", command.name());
    let mut run = Run { out, artifacts: Vec::new() };
    run.write_text(&format!("{}.config.json", command.name()), &(config_json.clone() + "\n"))?;
    let n = config.detector.input_size;
    let stop = CanonicalObject::for_class(config.attack.target_class, n)?;

    match command {
        Command::GenData => {
            let catalog = CanonicalObject::catalog(n);
            if catalog.len() != config.detector.classes {
                return Err(Error::config(
                    "/detector/classes",
                    format!("the scene generator draws {} classes", catalog.len()),
                ));
            }
            let mut rng = Pcg32::new(config.seed, DATA_STREAM);
            let scenes = synth_dataset(config.data.n_scenes, &config.data.scene, &catalog, &mut rng)?;
            write_dataset(&scenes, &run.path("dataset.bin"))?;
            println!("generated {} scenes", scenes.len());
        }
        Command::Train => {
            let data = read_dataset(&run.input(&config.paths.dataset, "dataset.bin")?)?;
            let (model, report) = train_toy(&config.detector, &config.arch, &data, &config.train, |e, l| {
                eprintln!("train epoch {e} loss {l:.6}")
            })?;
            model.save(&run.path("model.bin"))?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in report.epoch_losses.iter().enumerate() {
                csv.push_str(&format!("{e},{l}\n"));
            }
            run.write_text("train_loss.csv", &csv)?;
            println!("trained {}", model.tag());
        }
        Command::AttackDisappear => {
            let model = DetectorModel::load(&run.input(&config.paths.model, "model.bin")?)?;
            let init = initial_perturbation(&model, &stop, &config.attack)?;
            let outcome = optimize_disappearance(&model, &stop, init, &config.attack, epoch_log("disappear"))?;
            run.perturbation(&outcome, &stop, "perturbation")?;
            if let Some(last) = outcome.trace.last() {
                println!("final J {:.6} total {:.6}", last.j, last.total);
            }
        }
        Command::AttackCreate => {
            let model = DetectorModel::load(&run.input(&config.paths.model, "model.bin")?)?;
            let outcome = optimize_creation(&model, &config.attack, epoch_log("create"))?;
            let carrier = creation_carrier(&config.attack, n)?;
            run.perturbation(&outcome, &carrier, "patch")?;
            if let Some(last) = outcome.trace.last() {
                println!("final J {:.6} total {:.6}", last.j, last.total);
            }
        }
        Command::Eval => {
            let model = DetectorModel::load(&run.input(&config.paths.model, "model.bin")?)?;
            let target = config.attack.target_class;
            let env = Some(config.sweep.environment);
            let (stem, report) = match config.eval.mode {
                EvalMode::Clean => {
                    let frames = render_sweep(&config.eval.backgrounds, &stop, None, &config.sweep, config.seed)?;
                    ("eval-clean", eval_disappearance(&model, &frames, target, env)?)
                }
                EvalMode::Disappearance => {
                    let pert = read_delta_dump(&run.input(&config.paths.perturbation, "perturbation.pert")?)?;
                    let frames =
                        render_sweep(&config.eval.backgrounds, &stop, Some(&pert), &config.sweep, config.seed)?;
                    ("eval-disappearance", eval_disappearance(&model, &frames, target, env)?)
                }
                EvalMode::Creation => {
                    let patch = read_delta_dump(&run.input(&config.paths.perturbation, "patch.pert")?)?;
                    let carrier = creation_carrier(&config.attack, n)?;
                    let mut scene = config.attack.creation.scene.clone();
                    scene.backgrounds = config.eval.backgrounds;
                    let frames = render_placements(
                        &config.eval.backgrounds,
                        &carrier,
                        Some(&patch),
                        &scene,
                        config.eval.placements,
                        config.seed,
                    )?;
                    ("eval-creation", eval_creation(&model, &frames, target)?)
                }
                EvalMode::Background => {
                    let frames = render_backgrounds(&config.eval.backgrounds, n, config.eval.placements, config.seed);
                    ("eval-background", eval_creation(&model, &frames, target)?)
                }
            };
            run.report(stem, &report)?;
            println!("{}", report.summary());
        }
        Command::Transfer => {
            let a = DetectorModel::load(&run.input(&config.paths.model, "model.bin")?)?;
            let b = DetectorModel::load(&run.input(&config.paths.model_b, "model_b.bin")?)?;
            let pert = read_delta_dump(&run.input(&config.paths.perturbation, "perturbation.pert")?)?;
            let bg = &config.eval.backgrounds;
            let target = config.attack.target_class;
            let clean = eval_transfer(None, &a, &b, bg, &stop, &config.sweep, config.seed, target)?;
            let attacked = eval_transfer(Some(&pert), &a, &b, bg, &stop, &config.sweep, config.seed, target)?;
            run.report("transfer-clean-source", &clean.source)?;
            run.report("transfer-clean-target", &clean.target)?;
            run.report("transfer-source", &attacked.source)?;
            run.report("transfer-target", &attacked.target)?;
            println!("source {} clean {} attacked {}", a.tag(), clean.source.summary(), attacked.source.summary());
            println!("target {} clean {} attacked {}", b.tag(), clean.target.summary(), attacked.target.summary());
        }
        Command::Render => {
            let pert = match &config.paths.perturbation {
                Some(p) => Some(read_delta_dump(p)?),
                None => None,
            };
            let frames = render_sweep(&config.eval.backgrounds, &stop, pert.as_ref(), &config.sweep, config.seed)?;
            let dir = out.join("frames");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for f in &frames {
                write_ppm(&f.image, &run.path(&format!("frames/frame_{:03}.ppm", f.index)))?;
            }
            println!("rendered {} frames", frames.len());
        }
    }

    let manifest_name = format!("{}.manifest.json", command.name());
    run.artifacts.push(manifest_name.clone());
    let manifest = Manifest {
        command: command.name().to_string(),
        config_hash: sha256_hex(config_json.as_bytes()),
        seed: config.seed,
        artifacts: run.artifacts,
    };
    let path = out.join(manifest_name);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}
