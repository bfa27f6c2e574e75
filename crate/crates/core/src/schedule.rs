//! Annealing schedules A(s), B(s) (GHz), the fluctuation ratio Γ(s) = A/B,
//! and piecewise-linear reverse-anneal waveforms s(t) (t in µs).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fastest allowed sweep of s: a full 0 -> 1 traverse takes 5 µs.
pub const MAX_RATE: f64 = 1.0 / 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Device {
    LowNoise,
    HighNoise,
}

impl Device {
    pub fn label(self) -> &'static str {
        match self {
            Device::LowNoise => "low-noise",
            Device::HighNoise => "high-noise",
        }
    }

    pub fn parse(s: &str) -> Option<Device> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "low-noise" | "lownoise" | "low" => Some(Device::LowNoise),
            "high-noise" | "highnoise" | "high" => Some(Device::HighNoise),
            _ => None,
        }
    }
}

/// Parameters of the closed-form synthetic schedule
/// `A(s) = A0 (1 - s)^a`, `B(s) = B0 (c + (1 - c) s^b)`, with `A0` fixed by
/// requiring `Γ(anchor_s) = anchor_gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub a_exp: f64,
    pub b_exp: f64,
    pub b_floor: f64,
    pub b_max: f64,
    pub anchor_s: f64,
    pub anchor_gamma: f64,
}

impl SyntheticParams {
    pub fn for_device(device: Device) -> Self {
        match device {
            Device::LowNoise => SyntheticParams {
                a_exp: 6.0,
                b_exp: 3.0,
                b_floor: 0.005,
                b_max: 10.0,
                anchor_s: 0.57,
                anchor_gamma: 0.31,
            },
            Device::HighNoise => SyntheticParams {
                a_exp: 6.0,
                b_exp: 3.0,
                b_floor: 0.005,
                b_max: 10.5,
                anchor_s: 0.57,
                anchor_gamma: 0.089,
            },
        }
    }

    pub fn b(&self, s: f64) -> f64 {
        self.b_max * (self.b_floor + (1.0 - self.b_floor) * s.powf(self.b_exp))
    }

    pub fn a_max(&self) -> f64 {
        self.anchor_gamma * self.b(self.anchor_s) / (1.0 - self.anchor_s).powf(self.a_exp)
    }

    pub fn a(&self, s: f64) -> f64 {
        self.a_max() * (1.0 - s).powf(self.a_exp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    label: String,
    s: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    s: f64,
    #[serde(rename = "A_GHz")]
    a: f64,
    #[serde(rename = "B_GHz")]
    b: f64,
}

impl ScheduleTable {
    pub fn new(label: impl Into<String>, rows: Vec<(f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Schedule(format!(
                "need at least 2 rows, got {}",
                rows.len()
            )));
        }
        for (k, &(s, a, b)) in rows.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Schedule(format!("row {k}: s = {s} outside [0, 1]")));
            }
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Schedule(format!(
                    "row {k}: A and B must be finite and non-negative"
                )));
            }
        }
        for (k, w) in rows.windows(2).enumerate() {
            let ((s0, a0, b0), (s1, a1, b1)) = (w[0], w[1]);
            if s1 <= s0 {
                return Err(Error::Schedule(format!(
                    "rows {k}-{}: s must be strictly increasing",
                    k + 1
                )));
            }
            if a1 >= a0 {
                return Err(Error::Schedule(format!(
                    "rows {k}-{}: A must be strictly decreasing in s",
                    k + 1
                )));
            }
            if b1 <= b0 {
                return Err(Error::Schedule(format!(
                    "rows {k}-{}: B must be strictly increasing in s",
                    k + 1
                )));
            }
        }
        if rows[0].2 <= 0.0 {
            return Err(Error::Schedule("B must be positive so that Γ is defined".into()));
        }
        Ok(ScheduleTable {
            label: label.into(),
            s: rows.iter().map(|r| r.0).collect(),
            a: rows.iter().map(|r| r.1).collect(),
            b: rows.iter().map(|r| r.2).collect(),
        })
    }

    /// Smooth monotone table on a 1001-point grid.
    pub fn synthetic(device: Device) -> Self {
        Self::from_params(device.label(), &SyntheticParams::for_device(device))
    }

    pub fn from_params(label: &str, p: &SyntheticParams) -> Self {
        let rows = (0..=1000)
            .map(|k| {
                let s = k as f64 / 1000.0;
                (s, p.a(s), p.b(s))
            })
            .collect();
        Self::new(label, rows).expect("synthetic schedule is monotone")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.s
            .iter()
            .zip(&self.a)
            .zip(&self.b)
            .map(|((&s, &a), &b)| (s, a, b))
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s[0], self.s[self.s.len() - 1])
    }

    fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.s_range();
        if !(lo..=hi).contains(&s) {
            return Err(Error::out_of_range("s", s, format!("[{lo}, {hi}]")));
        }
        let k = match self.s.binary_search_by(|x| x.total_cmp(&s)) {
            Ok(k) => return Ok((k.min(self.s.len() - 2), if k == self.s.len() - 1 { 1.0 } else { 0.0 })),
            Err(k) => k - 1,
        };
        let w = (s - self.s[k]) / (self.s[k + 1] - self.s[k]);
        Ok((k, w))
    }

    fn lerp(v: &[f64], k: usize, w: f64) -> f64 {
        if w == 0.0 {
            v[k]
        } else if w == 1.0 {
            v[k + 1]
        } else {
            v[k] + w * (v[k + 1] - v[k])
        }
    }

    /// (A, B) in GHz at `s`, by monotone piecewise-linear interpolation.
    pub fn ab(&self, s: f64) -> Result<(f64, f64)> {
        let (k, w) = self.locate(s)?;
        Ok((Self::lerp(&self.a, k, w), Self::lerp(&self.b, k, w)))
    }

    pub fn gamma(&self, s: f64) -> Result<f64> {
        let (a, b) = self.ab(s)?;
        Ok(a / b)
    }

    /// Inverse of Γ(s) by bisection on the monotone map.
    pub fn s_of_gamma(&self, gamma: f64) -> Result<f64> {
        let (lo, hi) = self.s_range();
        let g_hi = self.gamma(lo)?;
        let g_lo = self.gamma(hi)?;
        if !(g_lo..=g_hi).contains(&gamma) {
            return Err(Error::out_of_range("Γ", gamma, format!("[{g_lo}, {g_hi}]")));
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.gamma(mid)? > gamma {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    pub fn read_csv<R: Read>(label: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "A_GHz", "B_GHz"] {
            return Err(Error::Schedule(format!(
                "expected header s,A_GHz,B_GHz, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = rdr
            .deserialize::<Row>()
            .map(|r| r.map(|r| (r.s, r.a, r.b)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(label, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_csv(label, f)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (s, a, b) in self.rows() {
            w.serialize(Row { s, a, b })?;
        }
        w.flush().map_err(|e| Error::io("<schedule csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub s_start: f64,
    pub s_end: f64,
}

impl Segment {
    fn s_at(&self, t: f64) -> f64 {
        if t == self.t_start {
            self.s_start
        } else if t == self.t_end {
            self.s_end
        } else {
            let w = (t - self.t_start) / (self.t_end - self.t_start);
            self.s_start + w * (self.s_end - self.s_start)
        }
    }

    pub fn rate(&self) -> f64 {
        (self.s_end - self.s_start) / (self.t_end - self.t_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub segments: Vec<Segment>,
    pub s_star: f64,
    pub tau_us: f64,
}

impl Waveform {
    pub fn total_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    pub fn s_at(&self, t: f64) -> f64 {
        let seg = self
            .segments
            .iter()
            .find(|seg| t <= seg.t_end)
            .unwrap_or_else(|| self.segments.last().unwrap());
        seg.s_at(t.clamp(seg.t_start, seg.t_end))
    }

    pub fn max_rate(&self) -> f64 {
        self.segments.iter().map(|s| s.rate().abs()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ramp 1 -> s* at `rate`, hold for `tau_us`, ramp back to 1.
pub fn reverse_waveform(s_star: f64, tau_us: f64, rate: f64) -> Result<Waveform> {
    if !(s_star > 0.0 && s_star < 1.0) {
        return Err(Error::out_of_range("s*", s_star, "(0, 1)"));
    }
    if !(tau_us >= 0.0 && tau_us.is_finite()) {
        return Err(Error::out_of_range("tau", tau_us, "[0, inf)"));
    }
    if !(rate > 0.0 && rate <= MAX_RATE) {
        return Err(Error::out_of_range("rate", rate, format!("(0, {MAX_RATE}]")));
    }
    let ramp = (1.0 - s_star) / rate;
    let mut segments = vec![Segment {
        t_start: 0.0,
        t_end: ramp,
        s_start: 1.0,
        s_end: s_star,
    }];
    let mut t = ramp;
    if tau_us > 0.0 {
        segments.push(Segment {
            t_start: t,
            t_end: t + tau_us,
            s_start: s_star,
            s_end: s_star,
        });
        t += tau_us;
    }
    segments.push(Segment {
        t_start: t,
        t_end: t + ramp,
        s_start: s_star,
        s_end: 1.0,
    });
    Ok(Waveform {
        segments,
        s_star,
        tau_us,
    })
}

/// Uniform time grid of `n_steps` points merged with every segment endpoint.
pub fn sample_waveform(waveform: &Waveform, n_steps: usize) -> Result<Vec<(f64, f64)>> {
    if n_steps < 2 {
        return Err(Error::Waveform(format!("n_steps must be >= 2, got {n_steps}")));
    }
    let total = waveform.total_time();
    let mut ts: Vec<f64> = (0..n_steps)
        .map(|k| total * k as f64 / (n_steps - 1) as f64)
        .collect();
    for seg in &waveform.segments {
        ts.push(seg.t_start);
        ts.push(seg.t_end);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    Ok(ts.into_iter().map(|t| (t, waveform.s_at(t))).collect())
}
