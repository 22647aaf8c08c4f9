//! CSV schemas shared by the commands and the plotter.
//!
//! Every file starts with a version comment (`# aloft-...-log v1`) and a
//! column header, so a reader can refuse files it does not understand and an
//! operator can tell logs apart at a glance. Floats are written in Rust's
//! shortest round-trip form, which keeps reruns byte-identical; optional
//! values (loss before the first update, training columns on the pre-training
//! GAN row) are empty cells.

use std::fmt::Display;
use std::str::FromStr;

use aloft::eval::EpisodeOutcome;
use aloft::gan::GanHistory;
use aloft::run::EpisodeRecord;

use crate::error::{config_err, CliError};

pub const TRAIN_LOG_VERSION: &str = "# aloft-train-log v1";
pub const TRAIN_LOG_HEADER: &str =
    "episode,step,epsilon,loss,episode_return,steps_until_collision,world";

pub const EVAL_VERSION: &str = "# aloft-eval v1";
pub const EVAL_HEADER: &str = "episode,steps,collided,episode_return";

pub const ATTENTION_VERSION: &str = "# aloft-attention v1";
pub const ATTENTION_HEADER: &str = "slot,weight";

pub const GAN_LOG_VERSION: &str = "# aloft-gan-log v1";
pub const GAN_LOG_HEADER: &str = "epoch,train_L1,train_cGAN,heldout_L1,heldout_cGAN";

/// Quotes a string field when it would otherwise break the row.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// An empty cell for a value that does not exist yet, NaN included.
fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if !x.is_nan() => x.to_string(),
        _ => String::new(),
    }
}

pub fn format_train_log(rows: &[EpisodeRecord]) -> String {
    let mut out = format!("{TRAIN_LOG_VERSION}\n{TRAIN_LOG_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode,
            r.end_step,
            r.epsilon,
            opt(r.loss),
            r.episode_return,
            r.steps,
            field(&r.world),
        ));
    }
    out
}

pub fn format_eval(episodes: &[EpisodeOutcome]) -> String {
    let mut out = format!("{EVAL_VERSION}\n{EVAL_HEADER}\n");
    for (i, e) in episodes.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i, e.steps, e.collided, e.episode_return
        ));
    }
    out
}

pub fn format_attention(weights: &[f64]) -> String {
    let mut out = format!("{ATTENTION_VERSION}\n{ATTENTION_HEADER}\n");
    for (i, w) in weights.iter().enumerate() {
        out.push_str(&format!("{i},{w}\n"));
    }
    out
}

pub fn format_gan_log(history: &GanHistory) -> String {
    let mut out = format!("{GAN_LOG_VERSION}\n{GAN_LOG_HEADER}\n");
    for r in &history.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            opt(Some(r.train_l1)),
            opt(Some(r.train_adversarial)),
            r.heldout_l1,
            r.heldout_adversarial,
        ));
    }
    out
}

/// One parsed training-log row; only the columns the plotter needs are
/// typed, but every row is validated in full.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub step: usize,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub episode_return: f64,
    pub steps: usize,
    pub world: String,
}

fn parse_num<T: FromStr>(origin: &str, line: usize, column: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    raw.parse().map_err(|e| {
        config_err(format!("{origin}:{line}: bad {column} value {raw:?}: {e}"))
    })
}

fn expect_line<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    origin: &str,
    line: usize,
    want: &str,
) -> Result<(), CliError> {
    match lines.next() {
        Some(got) if got == want => Ok(()),
        Some(got) => Err(config_err(format!(
            "{origin}:{line}: expected {want:?}, found {got:?}"
        ))),
        None => Err(config_err(format!("{origin}:{line}: expected {want:?}"))),
    }
}

pub fn parse_train_log(text: &str, origin: &str) -> Result<Vec<TrainLogRow>, CliError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    expect_line(&mut lines, origin, 1, TRAIN_LOG_VERSION)?;
    expect_line(&mut lines, origin, 2, TRAIN_LOG_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(7, ',').collect();
        if parts.len() != 7 {
            return Err(config_err(format!(
                "{origin}:{line_no}: expected 7 fields, found {}",
                parts.len()
            )));
        }
        let loss = if parts[3].is_empty() {
            None
        } else {
            Some(parse_num(origin, line_no, "loss", parts[3])?)
        };
        rows.push(TrainLogRow {
            episode: parse_num(origin, line_no, "episode", parts[0])?,
            step: parse_num(origin, line_no, "step", parts[1])?,
            epsilon: parse_num(origin, line_no, "epsilon", parts[2])?,
            loss,
            episode_return: parse_num(origin, line_no, "episode_return", parts[4])?,
            steps: parse_num(origin, line_no, "steps_until_collision", parts[5])?,
            world: parts[6].to_string(),
        });
    }
    Ok(rows)
}

/// Parses an attention CSV back into slot-ordered weights, checking that the
/// slot column really is 0..n in order.
pub fn parse_attention(text: &str, origin: &str) -> Result<Vec<f64>, CliError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    expect_line(&mut lines, origin, 1, ATTENTION_VERSION)?;
    expect_line(&mut lines, origin, 2, ATTENTION_HEADER)?;
    let mut weights = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(2, ',').collect();
        if parts.len() != 2 {
            return Err(config_err(format!(
                "{origin}:{line_no}: expected 2 fields, found {}",
                parts.len()
            )));
        }
        let slot: usize = parse_num(origin, line_no, "slot", parts[0])?;
        if slot != weights.len() {
            return Err(config_err(format!(
                "{origin}:{line_no}: slot {slot} out of order, expected {}",
                weights.len()
            )));
        }
        weights.push(parse_num(origin, line_no, "weight", parts[1])?);
    }
    Ok(weights)
}
