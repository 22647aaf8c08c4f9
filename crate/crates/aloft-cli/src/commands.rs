//! The command implementations behind each CLI subcommand.
//!
//! Each command follows the same shape: load the config file, let flags
//! override it, run the corresponding library driver, and write the outputs
//! into the `--out` directory. Anything randomized seeds itself from the one
//! root seed, so a command line is fully described by (config, seed).

use std::fs;
use std::path::{Path, PathBuf};

use aloft::eval::{evaluate, EvalReport, EvalSpec, Policy};
use aloft::gan::{
    evaluate as gan_evaluate, generate_pairs, load_gan, load_pairs, save_gan, save_pairs,
    train_gan, DiscParams, GenParams, PairSample,
};
use aloft::net::{load_qnet, save_qnet, QNetworkParams};
use aloft::rng::{streams, SeedTree};
use aloft::run::{train, TrainSpec};

use crate::config::{self, require_out, require_seed, PolicyKind, RunConfig};
use crate::csv;
use crate::error::{config_err, CliError};
use crate::args::{EvalArgs, GanEvalArgs, GanGenArgs, GanTrainArgs, PlotArgs, TrainArgs};
use crate::plot;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))
}

/// Loads the config and applies the overrides shared by every command.
fn load_config(
    config_path: Option<&Path>,
    worlds: &[PathBuf],
    variant: Option<PolicyKind>,
) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(config_path)?;
    if !worlds.is_empty() {
        cfg.run.worlds = worlds.to_vec();
    }
    if let Some(v) = variant {
        cfg.run.variant = v;
    }
    Ok(cfg)
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref(), &args.world, args.variant)?;
    if let Some(s) = args.steps {
        cfg.run.total_steps = s;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.run.checkpoint_every = c;
    }
    let seed = require_seed(args.common.seed, &cfg)?;
    let out = require_out(args.common.out.clone(), &cfg)?;

    let Some(variant) = cfg.run.variant.learned() else {
        return Err(config_err(format!(
            "variant {:?} is a fixed baseline and cannot be trained; pick dqn, drqn, or drqn_ta",
            cfg.run.variant.name()
        )));
    };

    let spec = TrainSpec {
        stages: cfg.load_stages()?,
        sim: cfg.sim.clone(),
        noise: cfg.noise.clone(),
        net: cfg.net_config(variant),
        agent: cfg.agent.clone(),
        total_steps: cfg.run.total_steps,
        checkpoint_every: cfg.run.checkpoint_every,
    };
    let result = train(&spec, seed)?;

    write_text(&out.join("train_log.csv"), &csv::format_train_log(&result.episodes))?;
    for (step, params) in &result.checkpoints {
        let path = out.join(format!("checkpoint_{step:08}.alft"));
        save_qnet(&path, params).map_err(|e| config_err(e.to_string()))?;
    }
    let final_path = out.join("final.alft");
    save_qnet(&final_path, &result.params).map_err(|e| config_err(e.to_string()))?;

    let recent: Vec<usize> = result
        .episodes
        .iter()
        .rev()
        .take(20)
        .map(|e| e.steps)
        .collect();
    let recent_mean = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<usize>() as f64 / recent.len() as f64
    };
    println!(
        "trained {} for {} steps over {} world(s); {} episodes, mean steps of last {}: {:.1}",
        cfg.run.variant.name(),
        spec.total_steps,
        spec.stages.len(),
        result.episodes.len(),
        recent.len(),
        recent_mean,
    );
    println!(
        "wrote {} and {} periodic checkpoint(s)",
        final_path.display(),
        result.checkpoints.len(),
    );
    Ok(())
}

/// Resolves the policy to evaluate: baselines come from the variant name,
/// learned policies from a checkpoint whose own variant wins.
fn load_policy(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Policy, CliError> {
    if cfg.run.variant.learned().is_none() {
        return Ok(match cfg.run.variant {
            PolicyKind::Random => Policy::Random,
            _ => Policy::Straight,
        });
    }
    let path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.run.checkpoint.clone())
        .ok_or_else(|| {
            config_err("a learned policy needs a checkpoint: pass --checkpoint or set it under [run]")
        })?;
    let params = load_qnet(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    check_rays(&params, cfg.sim.n_rays)?;
    Ok(Policy::Greedy(params))
}

fn check_rays(params: &QNetworkParams, n_rays: usize) -> Result<(), CliError> {
    let input = params.config.in_channels * params.config.in_height * params.config.in_width;
    if input != n_rays {
        return Err(config_err(format!(
            "checkpoint expects {input}-ray observations but the simulator is configured for {n_rays} rays"
        )));
    }
    Ok(())
}

fn eval_summary(cfg: &RunConfig, policy: &Policy, world: &str, report: &EvalReport) -> String {
    let hist = report.action_histogram();
    format!(
        "policy: {}\nworld: {}\nepisodes: {}\nmean steps until collision: {:.2}\n\
         std steps: {:.2}\ncollision rate: {:.3}\nwobble index: {:.4}\n\
         actions: straight {}, left {}, right {}\nobservations: {}\n",
        policy.name(),
        world,
        report.episodes.len(),
        report.mean_steps(),
        report.std_steps(),
        report.collision_rate(),
        report.wobble_index(),
        hist[0],
        hist[1],
        hist[2],
        if cfg.noise.is_some() { "degraded" } else { "clean" },
    )
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref(), &args.world, args.variant)?;
    if let Some(e) = args.episodes {
        cfg.run.episodes = e;
    }
    let seed = require_seed(args.common.seed, &cfg)?;
    let out = require_out(args.common.out.clone(), &cfg)?;

    let policy = load_policy(&cfg, args.checkpoint.as_deref())?;
    let spec = EvalSpec {
        map: cfg.load_first_world()?,
        sim: cfg.sim.clone(),
        noise: cfg.noise.clone(),
        episodes: cfg.run.episodes,
    };
    let world = spec.map.name.clone();
    let report = evaluate(&spec, &policy, seed)?;

    write_text(&out.join("eval.csv"), &csv::format_eval(&report.episodes))?;
    if let Some(weights) = &report.attention {
        write_text(&out.join("attention.csv"), &csv::format_attention(weights))?;
    }
    let summary = eval_summary(&cfg, &policy, &world, &report);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_gan_gen(args: GanGenArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref(), &args.world, None)?;
    if let Some(c) = args.count {
        cfg.run.count = c;
    }
    let seed = require_seed(args.common.seed, &cfg)?;
    let out = require_out(args.common.out.clone(), &cfg)?;

    let map = cfg.load_first_world()?;
    let mut rng = SeedTree::new(seed).stream(streams::GAN_DATA);
    if cfg.run.count == 0 {
        return Err(config_err("pair count must be at least 1"));
    }
    let pairs = generate_pairs(&map, &cfg.sim, cfg.run.count, &mut rng)?;
    let path = out.join("pairs.alft");
    save_pairs(&path, &pairs)?;
    println!(
        "wrote {} pairs ({}x{} px) to {}",
        pairs.len(),
        pairs[0].height(),
        pairs[0].width(),
        path.display(),
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<PairSample>, CliError> {
    load_pairs(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// The training split: separate files when a held-out path is configured,
/// otherwise one file cut at `n_train`/`n_heldout`.
fn split_dataset(
    cfg: &RunConfig,
    pairs_path: &Path,
    heldout_path: Option<&Path>,
) -> Result<(Vec<PairSample>, Vec<PairSample>), CliError> {
    let mut pairs = load_dataset(pairs_path)?;
    if let Some(h) = heldout_path {
        return Ok((pairs, load_dataset(h)?));
    }
    let (n_train, n_heldout) = (cfg.gan.n_train, cfg.gan.n_heldout);
    if pairs.len() < n_train + n_heldout {
        return Err(config_err(format!(
            "{} holds {} pairs but the split needs n_train + n_heldout = {}; \
             generate more or pass a separate --heldout file",
            pairs_path.display(),
            pairs.len(),
            n_train + n_heldout,
        )));
    }
    let heldout = pairs.split_off(n_train);
    pairs.truncate(n_train);
    Ok((pairs, heldout.into_iter().take(n_heldout).collect()))
}

pub fn cmd_gan_train(args: GanTrainArgs) -> Result<(), CliError> {
    let cfg = load_config(args.common.config.as_deref(), &[], None)?;
    let seed = require_seed(args.common.seed, &cfg)?;
    let out = require_out(args.common.out.clone(), &cfg)?;

    let pairs_path = args
        .pairs
        .or_else(|| cfg.run.pairs.clone())
        .ok_or_else(|| config_err("a pair dataset is required: pass --pairs or set it under [run]"))?;
    let heldout_path = args.heldout.or_else(|| cfg.run.heldout.clone());
    let (train_set, heldout_set) = split_dataset(&cfg, &pairs_path, heldout_path.as_deref())?;
    if train_set.is_empty() || heldout_set.is_empty() {
        return Err(config_err("both the training and held-out splits must be non-empty"));
    }

    let (h, w) = (train_set[0].height(), train_set[0].width());
    let mut rng = SeedTree::new(seed).stream(streams::GAN_TRAIN);
    let mut gen = GenParams::init(&mut rng);
    let mut disc = DiscParams::init(h, w, &mut rng)?;
    let history = train_gan(&mut gen, &mut disc, &train_set, &heldout_set, &cfg.gan, &mut rng)?;

    write_text(&out.join("gan_log.csv"), &csv::format_gan_log(&history))?;
    let ckpt = out.join("gan.alft");
    save_gan(&ckpt, &gen, &disc, &cfg.gan)?;

    let initial = history.initial_heldout_l1().unwrap_or(f64::NAN);
    let final_l1 = history.final_heldout_l1().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} pairs ({} held out); held-out L1 {:.4} -> {:.4}",
        cfg.gan.epochs,
        train_set.len(),
        heldout_set.len(),
        initial,
        final_l1,
    );
    println!("wrote {}", ckpt.display());
    Ok(())
}

pub fn cmd_gan_eval(args: GanEvalArgs) -> Result<(), CliError> {
    let cfg = load_config(args.common.config.as_deref(), &[], None)?;
    let out = require_out(args.common.out.clone(), &cfg)?;

    let ckpt = args
        .checkpoint
        .or_else(|| cfg.run.checkpoint.clone())
        .ok_or_else(|| config_err("a GAN checkpoint is required: pass --checkpoint or set it under [run]"))?;
    let pairs_path = args
        .pairs
        .or_else(|| cfg.run.pairs.clone())
        .ok_or_else(|| config_err("a pair dataset is required: pass --pairs or set it under [run]"))?;

    let (gen, disc, _) = load_gan(&ckpt).map_err(|e| config_err(format!("{}: {e}", ckpt.display())))?;
    let pairs = load_dataset(&pairs_path)?;
    if pairs.is_empty() {
        return Err(config_err(format!("{} holds no pairs", pairs_path.display())));
    }
    let (l1, adversarial) = gan_evaluate(&gen, &disc, &pairs)?;

    let summary = format!(
        "checkpoint: {}\ndataset: {} ({} pairs)\nL1: {}\nadversarial: {}\n",
        ckpt.display(),
        pairs_path.display(),
        pairs.len(),
        l1,
        adversarial,
    );
    write_text(&out.join("gan_eval.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let cfg = config::load(args.common.config.as_deref())?;
    let out = require_out(args.common.out.clone(), &cfg)?;
    if args.curve.is_none() && args.attention.is_none() {
        return Err(config_err("nothing to plot: pass --curve and/or --attention"));
    }

    if let Some(path) = &args.curve {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let rows = csv::parse_train_log(&text, &path.display().to_string())?;
        let svg_path = out.join("curve.svg");
        write_text(&svg_path, &plot::curve_svg(&rows))?;
        println!("wrote {} ({} episodes)", svg_path.display(), rows.len());
    }
    if let Some(path) = &args.attention {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let weights = csv::parse_attention(&text, &path.display().to_string())?;
        let svg_path = out.join("attention.svg");
        write_text(&svg_path, &plot::attention_svg(&weights))?;
        println!("wrote {} ({} slots)", svg_path.display(), weights.len());
    }
    Ok(())
}
