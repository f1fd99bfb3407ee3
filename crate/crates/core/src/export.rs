//! On-disk formats: the episode record file written by evaluation and the
//! per-episode trajectory file read by the plotting script.
//!
//! A trajectory file is JSON Lines: one `header` line, one `step` line per
//! snapshot (the first is the initial state at `t = 0` with no action or
//! reward) and one `footer` line. Real numbers are rounded to 9 significant
//! digits, which makes write, read, write byte-identical.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, FullAgentState, JointState, ObservableState};
use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::simulation::{count_discomfort, EnvType, EpisodeRecord, Outcome, StepRecord};

pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_VERSION: &str = "1.0";

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn opt9(x: Option<f64>) -> Option<f64> {
    x.map(sig9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub schema_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub episode: u64,
    pub env_type: EnvType,
    pub dt: f64,
    pub d_disc: f64,
    pub t_limit: f64,
    pub robot_radius: f64,
    pub robot_v_pref: f64,
    pub robot_goal: [f64; 2],
    pub human_radii: Vec<f64>,
    pub static_flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFields {
    pub r_c: f64,
    pub r_st: f64,
    pub r_dy: f64,
    pub r_t: f64,
    pub total: f64,
    pub n_col: usize,
    pub n_static: usize,
    pub d_lookahead_dyn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub t: f64,
    /// `[x, y, theta, vx, vy]`.
    pub robot: [f64; 5],
    /// `[x, y, vx, vy, static_flag]` with the flag as 0 or 1.
    pub humans: Vec<[f64; 5]>,
    /// `[v, dtheta]`; absent on the initial snapshot.
    pub action: Option<[f64; 2]>,
    pub reward: Option<RewardFields>,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFooter {
    pub outcome: Outcome,
    pub nav_time: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TrajectoryHeader),
    Step(TrajectoryStep),
    Footer(TrajectoryFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: TrajectoryHeader,
    pub steps: Vec<TrajectoryStep>,
    pub footer: TrajectoryFooter,
}

/// A broken invariant; `step` is `None` for file-level problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: Option<usize>,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.step {
            Some(k) => write!(f, "step {k}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn snapshot(
    t: f64,
    robot: &FullAgentState,
    humans: &[ObservableState],
    flags: &[bool],
    action: Option<Action>,
    reward: Option<&RewardBreakdown>,
    clearance: f64,
) -> TrajectoryStep {
    TrajectoryStep {
        t: sig9(t),
        robot: [robot.px, robot.py, robot.theta, robot.vx, robot.vy].map(sig9),
        humans: humans
            .iter()
            .zip(flags)
            .map(|(h, &st)| {
                [
                    sig9(h.px),
                    sig9(h.py),
                    sig9(h.vx),
                    sig9(h.vy),
                    if st { 1.0 } else { 0.0 },
                ]
            })
            .collect(),
        action: action.map(|a| [sig9(a.v), sig9(a.dtheta)]),
        reward: reward.map(|r| RewardFields {
            r_c: sig9(r.r_c),
            r_st: sig9(r.r_st),
            r_dy: sig9(r.r_dy),
            r_t: sig9(r.r_t),
            total: sig9(r.total),
            n_col: r.n_col,
            n_static: r.n_static,
            d_lookahead_dyn: opt9(r.d_lookahead_dyn),
        }),
        clearance: sig9(clearance),
    }
}

impl TrajectoryFile {
    pub fn from_record(rec: &EpisodeRecord) -> Self {
        let r0 = &rec.initial.robot;
        let header = TrajectoryHeader {
            schema_version: SCHEMA_VERSION.into(),
            config_hash: rec.config_hash.clone(),
            seed: rec.seed,
            episode: rec.index,
            env_type: rec.env_type,
            dt: sig9(rec.dt),
            d_disc: sig9(rec.d_disc),
            t_limit: sig9(rec.t_limit),
            robot_radius: sig9(r0.radius),
            robot_v_pref: sig9(r0.v_pref),
            robot_goal: [sig9(r0.gx), sig9(r0.gy)],
            human_radii: rec.initial.humans.iter().map(|h| sig9(h.radius)).collect(),
            static_flags: rec.static_flags.clone(),
        };
        let mut steps = Vec::with_capacity(rec.steps.len() + 1);
        steps.push(snapshot(
            0.0,
            r0,
            &rec.initial.humans,
            &rec.static_flags,
            None,
            None,
            rec.initial.min_clearance(),
        ));
        for s in &rec.steps {
            steps.push(snapshot(
                s.t,
                &s.robot,
                &s.humans,
                &rec.static_flags,
                Some(s.action),
                Some(&s.reward),
                s.clearance,
            ));
        }
        Self {
            header,
            footer: TrajectoryFooter {
                outcome: rec.outcome,
                nav_time: opt9(rec.nav_time),
                steps: rec.steps.len(),
            },
            steps,
        }
    }

    /// Rebuilds an episode record, to the file's precision.
    pub fn to_record(&self) -> Result<EpisodeRecord> {
        let h = &self.header;
        let first = self.steps.first().ok_or(Error::Empty("trajectory steps"))?;
        let robot = |s: &TrajectoryStep| FullAgentState {
            px: s.robot[0],
            py: s.robot[1],
            theta: s.robot[2],
            vx: s.robot[3],
            vy: s.robot[4],
            radius: h.robot_radius,
            gx: h.robot_goal[0],
            gy: h.robot_goal[1],
            v_pref: h.robot_v_pref,
        };
        let humans = |s: &TrajectoryStep| -> Vec<ObservableState> {
            s.humans
                .iter()
                .zip(&h.human_radii)
                .map(|(x, &radius)| ObservableState {
                    px: x[0],
                    py: x[1],
                    vx: x[2],
                    vy: x[3],
                    radius,
                })
                .collect()
        };
        let mut steps = Vec::with_capacity(self.steps.len().saturating_sub(1));
        for (k, s) in self.steps.iter().enumerate().skip(1) {
            let missing = |what: &str| Error::parse("trajectory", format!("step {k} has no {what}"));
            let a = s.action.ok_or_else(|| missing("action"))?;
            let r = s.reward.as_ref().ok_or_else(|| missing("reward"))?;
            steps.push(StepRecord {
                t: s.t,
                robot: robot(s),
                humans: humans(s),
                action: Action { v: a[0], dtheta: a[1] },
                reward: RewardBreakdown {
                    r_c: r.r_c,
                    r_st: r.r_st,
                    r_dy: r.r_dy,
                    r_t: r.r_t,
                    total: r.total,
                    n_col: r.n_col,
                    n_static: r.n_static,
                    d_lookahead_dyn: r.d_lookahead_dyn,
                },
                clearance: s.clearance,
            });
        }
        let discomfort_steps = count_discomfort(&steps, h.d_disc);
        Ok(EpisodeRecord {
            index: h.episode,
            seed: h.seed,
            config_hash: h.config_hash.clone(),
            env_type: h.env_type,
            dt: h.dt,
            d_disc: h.d_disc,
            t_limit: h.t_limit,
            initial: JointState {
                robot: robot(first),
                humans: humans(first),
            },
            static_flags: h.static_flags.clone(),
            steps,
            outcome: self.footer.outcome,
            nav_time: self.footer.nav_time,
            discomfort_steps,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |line: Line| {
            out.push_str(&serde_json::to_string(&line).expect("trajectory line serialises"));
            out.push('\n');
        };
        put(Line::Header(self.header.clone()));
        for s in &self.steps {
            put(Line::Step(s.clone()));
        }
        put(Line::Footer(self.footer.clone()));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let what = format!("trajectory line {}", n + 1);
            if n == 0 {
                check_schema(raw, &what)?;
            }
            match serde_json::from_str::<Line>(raw).map_err(|e| Error::parse(&what, e))? {
                Line::Header(h) if header.is_none() && steps.is_empty() => header = Some(h),
                Line::Step(s) if header.is_some() && footer.is_none() => steps.push(s),
                Line::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(Error::parse(what, "line out of order (header, steps, footer)")),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| Error::parse("trajectory", "missing header"))?,
            steps,
            footer: footer.ok_or_else(|| Error::parse("trajectory", "missing footer"))?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn check_schema(raw: &str, what: &str) -> Result<()> {
    #[derive(Deserialize)]
    struct Probe {
        schema_version: Option<String>,
    }
    let probe: Probe = serde_json::from_str(raw).map_err(|e| Error::parse(what, e))?;
    let version = probe
        .schema_version
        .ok_or_else(|| Error::parse(what, "header has no schema_version"))?;
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| Error::parse(what, format!("malformed schema_version {version:?}")))?;
    if major != SCHEMA_MAJOR {
        return Err(Error::parse(
            what,
            format!("unsupported schema major {major} (this reader handles {SCHEMA_MAJOR})"),
        ));
    }
    Ok(())
}

/// Checks the structural invariants of a trajectory file.
pub fn validate(file: &TrajectoryFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |step: Option<usize>, field: &str, message: String| {
        out.push(Violation {
            step,
            field: field.into(),
            message,
        })
    };
    let h = &file.header;
    if h.human_radii.len() != h.static_flags.len() {
        bad(None, "header.static_flags", "length differs from human_radii".into());
    }
    if file.steps.is_empty() {
        bad(None, "steps", "no steps".into());
    }
    if file.footer.steps + 1 != file.steps.len() {
        bad(
            None,
            "footer.steps",
            format!(
                "{} transitions declared, {} snapshots present",
                file.footer.steps,
                file.steps.len()
            ),
        );
    }
    if (file.footer.outcome == Outcome::Success) != file.footer.nav_time.is_some() {
        bad(
            None,
            "footer.nav_time",
            "present exactly when the outcome is success".into(),
        );
    }
    let tol = 1e-6 * h.dt.abs().max(1.0);
    for (k, s) in file.steps.iter().enumerate() {
        if k == 0 {
            if s.t != 0.0 {
                bad(Some(k), "t", format!("initial snapshot at t = {}", s.t));
            }
        } else {
            let prev = file.steps[k - 1].t;
            if s.t <= prev {
                bad(Some(k), "t", format!("{} does not increase on {prev}", s.t));
            } else if (s.t - prev - h.dt).abs() > tol {
                bad(
                    Some(k),
                    "t",
                    format!("increment {} differs from dt {}", s.t - prev, h.dt),
                );
            }
            if s.action.is_none() {
                bad(Some(k), "action", "missing".into());
            }
            if s.reward.is_none() {
                bad(Some(k), "reward", "missing".into());
            }
        }
        if s.humans.len() != h.human_radii.len() {
            bad(
                Some(k),
                "humans",
                format!("{} humans, header declares {}", s.humans.len(), h.human_radii.len()),
            );
        }
        for (i, (x, &st)) in s.humans.iter().zip(&h.static_flags).enumerate() {
            if x[4] != if st { 1.0 } else { 0.0 } {
                bad(
                    Some(k),
                    &format!("humans[{i}].static_flag"),
                    "disagrees with header".into(),
                );
            }
        }
        let finite = s.robot.iter().chain(s.humans.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            bad(Some(k), "robot/humans", "non-finite coordinate".into());
        }
    }
    out
}

/// Writes one record per line at full precision.
pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::parse("episode record", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| Error::parse(format!("{} line {}", path.display(), n + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

/// Picks episode `index` (position in the file).
pub fn select_record(records: &[EpisodeRecord], index: usize) -> Result<&EpisodeRecord> {
    records.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: records.len(),
    })
}
