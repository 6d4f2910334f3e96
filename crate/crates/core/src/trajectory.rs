//! Sampled game trajectories and their CSV form.
//!
//! Column order is fixed:
//! `t, v_rp, v_thp, r_p, th_p, v_re, v_the, r_e, th_e, lam_vrp, lam_vthp,
//! lam_rp, lam_thp, lam_vre, lam_vthe, lam_re, lam_the, delta_p, delta_e`.
//! Missing quantities are written as empty fields. Angles are radians and
//! unwrapped.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::game::{GameState, PlayerCostate};
use crate::transcription::CollocationTrajectory;

pub const COLUMNS: [&str; 19] = [
    "t", "v_rp", "v_thp", "r_p", "th_p", "v_re", "v_the", "r_e", "th_e", "lam_vrp", "lam_vthp", "lam_rp", "lam_thp", "lam_vre",
    "lam_vthe", "lam_re", "lam_the", "delta_p", "delta_e",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: GameState,
    pub pursuer_costate: Option<PlayerCostate>,
    pub evader_costate: Option<PlayerCostate>,
    pub delta_p: Option<f64>,
    pub delta_e: Option<f64>,
}

impl Sample {
    pub fn values(&self) -> [Option<f64>; 19] {
        let mut v = [None; 19];
        v[0] = Some(self.t);
        for (i, x) in self.state.to_array().into_iter().enumerate() {
            v[1 + i] = Some(x);
        }
        for (offset, lam) in [(9, self.pursuer_costate), (13, self.evader_costate)] {
            if let Some(l) = lam {
                for (i, x) in l.to_array().into_iter().enumerate() {
                    v[offset + i] = Some(x);
                }
            }
        }
        v[17] = self.delta_p;
        v[18] = self.delta_e;
        v
    }

    /// Inverse of [`Sample::values`]. Time and states are mandatory; a
    /// costate block is present only when all four entries are.
    pub fn from_values(v: &[Option<f64>; 19]) -> Result<Self> {
        let need = |i: usize| v[i].ok_or_else(|| Error::Schema(format!("column `{}` must not be empty", COLUMNS[i])));
        let mut state = [0.0; 8];
        for (i, s) in state.iter_mut().enumerate() {
            *s = need(1 + i)?;
        }
        let block = |offset: usize| -> Result<Option<PlayerCostate>> {
            let vals: Vec<Option<f64>> = v[offset..offset + 4].to_vec();
            match vals.iter().filter(|x| x.is_some()).count() {
                0 => Ok(None),
                4 => Ok(Some(PlayerCostate::from_slice(&vals.iter().map(|x| x.unwrap()).collect::<Vec<_>>()))),
                _ => Err(Error::Schema(format!("costate columns from `{}` are partially filled", COLUMNS[offset]))),
            }
        };
        Ok(Self {
            t: need(0)?,
            state: GameState::from_slice(&state),
            pursuer_costate: block(9)?,
            evader_costate: block(13)?,
            delta_p: v[17],
            delta_e: v[18],
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Schema("a trajectory needs at least two samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Schema("sample times must be strictly increasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn terminal_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Values of one named column; `None` where the column is empty.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = column_index(name)?;
        Ok(self.samples.iter().map(|s| s.values()[i]).collect())
    }

    /// Linear interpolation of a column at `t`, clamped to the time span.
    pub fn interpolate(&self, name: &str, t: f64) -> Result<f64> {
        let col = self.column(name)?;
        let times = self.times();
        let j = match times.partition_point(|&x| x <= t) {
            0 => 0,
            k if k >= times.len() => times.len() - 2,
            k => k - 1,
        };
        let (a, b) = match (col[j], col[j + 1]) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Schema(format!("column `{name}` has empty entries"))),
        };
        let s = ((t - times[j]) / (times[j + 1] - times[j])).clamp(0.0, 1.0);
        Ok(a + s * (b - a))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS)?;
        let delta_p = unwrap_angles(&self.samples.iter().map(|s| s.delta_p).collect::<Vec<_>>());
        let delta_e = unwrap_angles(&self.samples.iter().map(|s| s.delta_e).collect::<Vec<_>>());
        for (k, s) in self.samples.iter().enumerate() {
            let mut v = s.values();
            v[17] = delta_p[k];
            v[18] = delta_e[k];
            out.write_record(v.iter().map(|x| x.map_or_else(String::new, |x| format!("{x:.16e}"))))?;
        }
        out.flush().map_err(|e| Error::Io {
            path: "<trajectory csv>".into(),
            source: e,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::Schema(format!(
                "unexpected trajectory header `{}` (expected `{}`)",
                header.iter().collect::<Vec<_>>().join(","),
                COLUMNS.join(",")
            )));
        }
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut v = [None; 19];
            for (i, field) in rec.iter().enumerate() {
                let field = field.trim();
                if !field.is_empty() {
                    v[i] = Some(field.parse::<f64>().map_err(|e| {
                        Error::Schema(format!("row {}, column `{}`: {e}", row + 1, COLUMNS[i]))
                    })?);
                }
            }
            samples.push(Sample::from_values(&v)?);
        }
        Self::new(samples)
    }

    /// Node samples of a collocation solution of the spacecraft game. The
    /// evader's costates are not part of the transcription and stay empty.
    pub fn from_collocation(c: &CollocationTrajectory) -> Result<Self> {
        let samples = (0..c.times.len())
            .map(|k| Sample {
                t: c.times[k],
                state: GameState::from_slice(&c.states[k]),
                pursuer_costate: Some(PlayerCostate::from_slice(&c.costates[k])),
                evader_costate: None,
                delta_p: Some(c.follower[k][0]),
                delta_e: Some(c.leader[k][0]),
            })
            .collect();
        Self::new(samples)
    }
}

fn column_index(name: &str) -> Result<usize> {
    COLUMNS
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::Schema(format!("unknown trajectory column `{name}`")))
}

/// Removes `2 pi` jumps between consecutive present values.
pub fn unwrap_angles(a: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(a.len());
    let mut prev: Option<f64> = None;
    for &x in a {
        let y = x.map(|x| match prev {
            Some(p) => x - 2.0 * PI * ((x - p) / (2.0 * PI)).round(),
            None => x,
        });
        if y.is_some() {
            prev = y;
        }
        out.push(y);
    }
    out
}
