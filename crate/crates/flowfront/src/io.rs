//! CSV and JSON surfaces.
//!
//! Data series travel as CSV with header `t,line_0,...,line_{n-1}`; `NaN`
//! is the only missing-value sentinel. Floats are written with 9
//! significant digits so reruns are byte-identical.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::eval::SweepRecord;
use crate::filter::ObservationFrame;
use crate::mle::FitResult;
use crate::pde::FrontSeries;

/// 9-significant-digit float formatting; `NaN` spelled literally.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.8e}")
    }
}

/// Serializes a front series, masked entries (if any) as `NaN`.
pub fn front_series_to_csv(series: &FrontSeries) -> String {
    let mut out = String::from("t");
    for k in 0..series.columns.len() {
        out.push_str(&format!(",line_{k}"));
    }
    out.push('\n');
    for (t, row) in series.times.iter().zip(&series.fronts) {
        out.push_str(&fmt_float(*t));
        for &v in row {
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    out
}

/// Serializes observation frames (masked entries as `NaN`).
pub fn frames_to_csv(frames: &[ObservationFrame]) -> String {
    let n = frames.first().map(|f| f.z.len()).unwrap_or(0);
    let mut out = String::from("t");
    for k in 0..n {
        out.push_str(&format!(",line_{k}"));
    }
    out.push('\n');
    for frame in frames {
        out.push_str(&fmt_float(frame.t));
        for i in 0..n {
            out.push(',');
            if frame.mask[i] {
                out.push_str(&fmt_float(frame.z[i]));
            } else {
                out.push_str("NaN");
            }
        }
        out.push('\n');
    }
    out
}

/// Parses a `t,line_*` CSV into observation frames; `NaN` entries become
/// masked-out values.
pub fn frames_from_csv(text: &str) -> Result<Vec<ObservationFrame>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "expected header 't,line_0,...', got '{header}'"
        )));
    }
    let n = cols.len() - 1;
    let mut frames = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(Error::InvalidArgument(format!(
                "row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                n + 1
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad float '{s}' in row {}", lineno + 2)))
        };
        let t = parse(fields[0])?;
        let mut z = DVector::zeros(n);
        let mut mask = vec![true; n];
        for i in 0..n {
            let v = parse(fields[i + 1])?;
            z[i] = v;
            mask[i] = !v.is_nan();
        }
        frames.push(ObservationFrame { t, z, mask });
    }
    if frames.is_empty() {
        return Err(Error::InvalidArgument("CSV contains no data rows".into()));
    }
    Ok(frames)
}

/// `sweep.csv` body; failed cells carry an `error:` tag in the avg_rmse
/// column.
pub fn sweep_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("config_id,order,n_sensors,dt,noise,scenario,replicate,avg_rmse\n");
    for r in records {
        let value = match &r.outcome {
            Ok(rec) => fmt_float(rec.avg_rmse),
            Err(msg) => format!("error:{}", msg.replace([',', '\n'], ";")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.config_id,
            r.order,
            r.n_sensors,
            fmt_float(r.sample_interval),
            fmt_float(r.noise_std),
            r.scenario,
            r.replicate,
            value
        ));
    }
    out
}

/// `rmse_<config_id>.csv` body.
pub fn rmse_series_to_csv(series: &[(f64, f64)]) -> String {
    let mut out = String::from("t,rmse\n");
    for (t, r) in series {
        out.push_str(&format!("{},{}\n", fmt_float(*t), fmt_float(*r)));
    }
    out
}

/// Fitted-parameter JSON in the published schema.
pub fn fit_result_to_json(fit: &FitResult) -> String {
    let value = serde_json::json!({
        "C0": fit.params.c0.iter().copied().collect::<Vec<f64>>(),
        "D0": fit.params.d0,
        "sigma": fit.params.sigma,
        "s_meas": fit.params.s_meas,
        "negloglik": fit.negloglik,
        "converged": fit.converged,
    });
    serde_json::to_string_pretty(&value).expect("static schema")
}
