//! Gain schedule types, interpolation and file formats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::WeightConfig;
use crate::error::{Error, Result};
use crate::plant::{BreakPoint, ControllerParams, RefModelParams};

/// Margins at one break point. `None` in a gain-margin field means infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSummary {
    pub point: BreakPoint,
    pub disk_alpha: f64,
    pub disk_gm_db: Option<f64>,
    pub disk_pm_deg: f64,
    pub gm_db: Option<f64>,
    /// `None` when the loop gain never crosses unity.
    pub pm_deg: Option<f64>,
}

/// Multi-loop disk margin over several break points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiLoopSummary {
    pub disk_alpha: f64,
    pub disk_gm_db: Option<f64>,
    pub disk_pm_deg: f64,
}

/// Values recomputed at certification accuracy after tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    /// `|| W_S S_o,eta ||_inf`
    pub soeta_constraint: f64,
    /// `|| alpha (S_omega_dot + (sigma - 1)/2) ||_inf`
    pub disk_constraint: f64,
    /// `|| W_M M ||_inf`
    pub model_following_constraint: f64,
    pub margins: Vec<MarginSummary>,
    pub multiloop_mc_omega_dot: MultiLoopSummary,
    /// First -3 dB crossing of `|S_o,eta|` from below, rad/s.
    pub soeta_bandwidth: f64,
    pub overshoot: f64,
    pub rise_time: Option<f64>,
    pub settle_time: Option<f64>,
    pub stable: bool,
}

impl Certificate {
    pub fn max_constraint(&self) -> f64 {
        self.soeta_constraint.max(self.disk_constraint).max(self.model_following_constraint)
    }

    pub fn margin(&self, point: BreakPoint) -> Option<&MarginSummary> {
        self.margins.iter().find(|m| m.point == point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPoint {
    pub tau: f64,
    pub controller: ControllerParams,
    pub weights: WeightConfig,
    pub refmodel: RefModelParams,
    pub certified: Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    PiecewiseLinear,
}

/// Design points ordered by strictly increasing `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSchedule {
    pub format_version: u32,
    pub interpolation: Interpolation,
    pub points: Vec<DesignPoint>,
}

pub const SCHEDULE_FORMAT_VERSION: u32 = 1;

/// Controller and reference model looked up at one `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub controller: ControllerParams,
    pub refmodel: RefModelParams,
    /// The query was outside the schedule range and was clamped.
    pub clamped: bool,
}

impl GainSchedule {
    pub fn new(points: Vec<DesignPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].tau > w[0].tau)) {
            return Err(Error::Schedule("design points must have strictly increasing tau".into()));
        }
        Ok(Self { format_version: SCHEDULE_FORMAT_VERSION, interpolation: Interpolation::PiecewiseLinear, points })
    }

    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: GainSchedule = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if s.format_version != SCHEDULE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported schedule format version {}", s.format_version)));
        }
        GainSchedule::new(s.points)
    }

    /// One row per design point; columns are the dotted field paths of the
    /// JSON record, empty cells are `null`.
    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<BTreeMap<String, String>> = self
            .points
            .iter()
            .map(|p| {
                let v = serde_json::to_value(p).map_err(|e| Error::Format(e.to_string()))?;
                let mut flat = BTreeMap::new();
                flatten("", &v, &mut flat);
                Ok(flat)
            })
            .collect::<Result<_>>()?;
        let mut header: Vec<String> = rows.first().map(|r| r.keys().cloned().collect()).unwrap_or_default();
        // put the key parameters first for readability
        let lead = ["tau", "controller.k_eta", "controller.k_omega", "controller.a_ff", "controller.b_ff"];
        header.sort_by_key(|k| (lead.iter().position(|l| l == k).unwrap_or(lead.len()), k.clone()));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(csv_err)?;
        for r in &rows {
            w.write_record(header.iter().map(|k| r.get(k).map(String::as_str).unwrap_or(""))).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut points = Vec::new();
        for (n, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let mut root = Value::Object(Map::new());
            for (k, c) in header.iter().zip(row.iter()) {
                insert_path(&mut root, k, parse_cell(c))?;
            }
            let p: DesignPoint = serde_json::from_value(root).map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))?;
            points.push(p);
        }
        GainSchedule::new(points)
    }

    /// Piecewise-linear lookup in `tau`; queries outside the range are
    /// clamped to the end points and flagged.
    pub fn interpolate(&self, tau: f64) -> Result<Interpolated> {
        let pts = &self.points;
        let (first, last) = match (pts.first(), pts.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Schedule("empty schedule".into())),
        };
        if !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau query {tau}")));
        }
        let stored = |p: &DesignPoint, clamped| Interpolated { controller: p.controller, refmodel: p.refmodel, clamped };
        if tau < first.tau {
            log::warn!("tau {tau} below schedule range, clamped to {}", first.tau);
            return Ok(stored(first, true));
        }
        if tau > last.tau {
            log::warn!("tau {tau} above schedule range, clamped to {}", last.tau);
            return Ok(stored(last, true));
        }
        if let Some(p) = pts.iter().find(|p| p.tau == tau) {
            return Ok(stored(p, false));
        }
        let k = pts.iter().position(|p| p.tau > tau).expect("inside range") - 1;
        let (p0, p1) = (&pts[k], &pts[k + 1]);
        let t = (tau - p0.tau) / (p1.tau - p0.tau);
        let lin = |a: f64, b: f64| a + t * (b - a);
        let (c0, c1) = (p0.controller, p1.controller);
        let (r0, r1) = (p0.refmodel, p1.refmodel);
        Ok(Interpolated {
            controller: ControllerParams {
                k_eta: lin(c0.k_eta, c1.k_eta),
                k_omega: lin(c0.k_omega, c1.k_omega),
                a_ff: lin(c0.a_ff, c1.a_ff),
                b_ff: lin(c0.b_ff, c1.b_ff),
            },
            refmodel: RefModelParams {
                omega_ref: lin(r0.omega_ref, r1.omega_ref),
                zeta_ref: lin(r0.zeta_ref, r1.zeta_ref),
                b_ref: lin(r0.b_ref, r1.b_ref),
            },
            clamped: false,
        })
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&key(&format!("{i:02}")), x, out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), String::new());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn parse_cell(c: &str) -> Value {
    if c.is_empty() {
        return Value::Null;
    }
    match serde_json::from_str::<Value>(c) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(c.to_string()),
    }
}

fn insert_path(root: &mut Value, path: &str, leaf: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let is_last = i + 1 == parts.len();
        let next_is_index = !is_last && parts[i + 1].chars().all(|c| c.is_ascii_digit());
        let fresh = || if next_is_index { Value::Array(Vec::new()) } else { Value::Object(Map::new()) };
        if part.chars().all(|c| c.is_ascii_digit()) {
            let idx: usize = part.parse().map_err(|_| Error::Format(format!("bad index in {path}")))?;
            let arr = cur.as_array_mut().ok_or_else(|| Error::Format(format!("{path}: expected array")))?;
            while arr.len() <= idx {
                arr.push(Value::Null);
            }
            if is_last {
                arr[idx] = leaf;
                return Ok(());
            }
            if arr[idx].is_null() {
                arr[idx] = fresh();
            }
            cur = &mut arr[idx];
        } else {
            let obj = cur.as_object_mut().ok_or_else(|| Error::Format(format!("{path}: expected object")))?;
            if is_last {
                obj.insert(part.to_string(), leaf);
                return Ok(());
            }
            cur = obj.entry(part.to_string()).or_insert_with(fresh);
        }
    }
    Ok(())
}
