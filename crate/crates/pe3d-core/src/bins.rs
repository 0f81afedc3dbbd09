//! Depth-range discretization (UD, LID, SID) and bin bracketing.
//!
//! All three schemes anchor both range endpoints: `centers[0] = d_min` and
//! `centers[n-1] = d_max`. With that convention the uniform interval is
//! `d_delta = (d_max - d_min) / (n - 1)`.

use crate::error::{Error, Result};

/// Discretization scheme over a depth range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMethod {
    /// Uniform discretization: equal increments.
    Ud,
    /// Linear-increasing discretization: increments grow linearly
    /// (proportional to 1 : 2 : ... : n-1).
    Lid,
    /// Spacing-increasing discretization: log-uniform, constant ratio.
    Sid,
}

impl BinMethod {
    pub fn name(self) -> &'static str {
        match self {
            BinMethod::Ud => "ud",
            BinMethod::Lid => "lid",
            BinMethod::Sid => "sid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ud" => Ok(BinMethod::Ud),
            "lid" => Ok(BinMethod::Lid),
            "sid" => Ok(BinMethod::Sid),
            other => Err(Error::Config {
                path: "bins.method".into(),
                message: format!("unknown method '{other}' (expected ud|lid|sid)"),
            }),
        }
    }
}

/// Ordered bin centers from a discretization method over a depth range.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBins {
    pub method: BinMethod,
    pub d_min: f64,
    pub d_max: f64,
    centers: Vec<f64>,
}

impl DepthBins {
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    /// Degenerate single-point bins used by the fixed-depth ray encoding.
    pub fn single(depth: f64) -> Result<Self> {
        if depth <= 0.0 {
            return Err(Error::NonPositiveDepth { depth });
        }
        Ok(Self {
            method: BinMethod::Ud,
            d_min: depth,
            d_max: depth,
            centers: vec![depth],
        })
    }

    /// Parse the CLI form `method:min:max:count`, e.g. `ud:1:61:64`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Config {
                path: "bins".into(),
                message: format!("expected method:min:max:count, got '{spec}'"),
            });
        }
        let method = BinMethod::parse(parts[0])?;
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Config {
                path: format!("bins.{what}"),
                message: format!("not a number: '{s}'"),
            })
        };
        let d_min = parse_f(parts[1], "min")?;
        let d_max = parse_f(parts[2], "max")?;
        let count: usize = parts[3].parse().map_err(|_| Error::Config {
            path: "bins.count".into(),
            message: format!("not an integer: '{}'", parts[3]),
        })?;
        make_bins(method, d_min, d_max, count)
    }

    pub fn spec_string(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.method.name(),
            self.d_min,
            self.d_max,
            self.count()
        )
    }
}

/// Build `count` bin centers over `[d_min, d_max]` with the given method.
pub fn make_bins(method: BinMethod, d_min: f64, d_max: f64, count: usize) -> Result<DepthBins> {
    if !(d_min > 0.0 && d_max > d_min) {
        return Err(Error::InvalidRange { d_min, d_max });
    }
    if count < 2 {
        return Err(Error::TooFewBins {
            required: 2,
            got: count,
        });
    }
    let n = count as f64;
    let span = d_max - d_min;
    let centers: Vec<f64> = (0..count)
        .map(|i| {
            let i_f = i as f64;
            match method {
                BinMethod::Ud => d_min + i_f * span / (n - 1.0),
                BinMethod::Lid => d_min + span * (i_f * (i_f + 1.0)) / ((n - 1.0) * n),
                BinMethod::Sid => {
                    (d_min.ln() + (i_f / (n - 1.0)) * (d_max / d_min).ln()).exp()
                }
            }
        })
        .collect();
    Ok(DepthBins {
        method,
        d_min,
        d_max,
        centers,
    })
}

/// Locate the two bins bracketing `d` and the lower bin's interpolation
/// weight `w = (d_{i+1} - d) / (d_{i+1} - d_i)`.
///
/// A depth exactly on an interior center returns that index with `w = 1`;
/// `d = d_max` returns the last pair with `w = 0` (all weight on the top
/// bin). Callers are expected to clamp into range first.
pub fn bracket(d: f64, bins: &DepthBins) -> Result<(usize, usize, f64)> {
    if bins.count() < 2 {
        return Err(Error::TooFewBins {
            required: 2,
            got: bins.count(),
        });
    }
    if d < bins.d_min || d > bins.d_max {
        return Err(Error::OutOfRange {
            depth: d,
            d_min: bins.d_min,
            d_max: bins.d_max,
        });
    }
    let centers = bins.centers();
    // Largest i with centers[i] <= d, capped so i+1 stays in range.
    let mut lo = match centers.partition_point(|c| *c <= d) {
        0 => 0,
        p => p - 1,
    };
    lo = lo.min(centers.len() - 2);
    let (a, b) = (centers[lo], centers[lo + 1]);
    let w = (b - d) / (b - a);
    Ok((lo, lo + 1, w))
}
