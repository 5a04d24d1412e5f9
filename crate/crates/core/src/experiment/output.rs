//! Comma-separated tables and the run manifest.
//!
//! Numbers are written with 17 significant digits so tables round-trip
//! exactly; column orders are fixed per table.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::sim::fmt_f64;

use super::study::{Bands, BandRow, ConvergenceStudy, Surfaces, TailSummary};
use super::ExperimentError;

pub const BANDS_DENSITY_FILE: &str = "bands_density.csv";
pub const BANDS_INTENSITY_FILE: &str = "bands_death_intensity.csv";
pub const BANDS_RATE_FILE: &str = "bands_death_rate.csv";
pub const CONVERGENCE_ERRORS_FILE: &str = "convergence_errors.csv";
pub const CONVERGENCE_FITS_FILE: &str = "convergence_fits.csv";
pub const SURFACE_DENSITY_FILE: &str = "surface_density.csv";
pub const SURFACE_INTENSITY_FILE: &str = "surface_death_intensity.csv";
pub const TAIL_SAMPLES_FILE: &str = "discrepancy_samples.csv";
pub const TAIL_TABLE_FILE: &str = "tail.csv";
pub const TAIL_SUMMARY_FILE: &str = "tail_summary.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Formats a number for a table; infinities are written as `inf`.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        fmt_f64(x)
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), ExperimentError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = fs::File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| ExperimentError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

fn band_row(r: &BandRow) -> Vec<String> {
    vec![
        num(r.t),
        num(r.a),
        num(r.truth),
        num(r.adaptive.mean),
        num(r.adaptive.lower),
        num(r.adaptive.upper),
        num(r.oracle.mean),
        num(r.oracle.lower),
        num(r.oracle.upper),
    ]
}

const BAND_HEADER: [&str; 9] = [
    "t",
    "a",
    "truth",
    "adaptive_mean",
    "adaptive_q025",
    "adaptive_q975",
    "oracle_mean",
    "oracle_q025",
    "oracle_q975",
];

pub fn write_bands(dir: &Path, bands: &Bands) -> Result<(), ExperimentError> {
    write_csv(&dir.join(BANDS_DENSITY_FILE), &BAND_HEADER, bands.density.iter().map(band_row))?;
    write_csv(&dir.join(BANDS_INTENSITY_FILE), &BAND_HEADER, bands.intensity.iter().map(band_row))?;
    let mut header = vec!["varpi"];
    header.extend(BAND_HEADER);
    write_csv(
        &dir.join(BANDS_RATE_FILE),
        &header,
        bands.rate.iter().flat_map(|(varpi, rows)| {
            rows.iter().map(move |r| {
                let mut row = vec![num(*varpi)];
                row.extend(band_row(r));
                row
            })
        }),
    )
}

pub fn write_convergence(dir: &Path, study: &ConvergenceStudy) -> Result<(), ExperimentError> {
    write_csv(
        &dir.join(CONVERGENCE_ERRORS_FILE),
        &["target", "t", "a", "N", "rmse_adaptive", "rmse_oracle"],
        study.errors.iter().map(|e| {
            vec![
                e.point.target.to_string(),
                num(e.point.t),
                num(e.point.a),
                e.scale.to_string(),
                num(e.rmse_adaptive),
                num(e.rmse_oracle),
            ]
        }),
    )?;
    write_csv(
        &dir.join(CONVERGENCE_FITS_FILE),
        &[
            "target",
            "t",
            "a",
            "region",
            "slope_adaptive",
            "intercept_adaptive",
            "slope_oracle",
            "intercept_oracle",
            "theory_smoothness",
            "theory_slope",
        ],
        study.fits.iter().map(|f| {
            vec![
                f.point.target.to_string(),
                num(f.point.t),
                num(f.point.a),
                f.region.to_string(),
                num(f.slope),
                num(f.intercept),
                num(f.oracle_slope),
                num(f.oracle_intercept),
                num(f.theory.s),
                num(-f.theory.rate),
            ]
        }),
    )
}

pub fn write_surfaces(dir: &Path, s: &Surfaces) -> Result<(), ExperimentError> {
    write_csv(
        &dir.join(SURFACE_DENSITY_FILE),
        &["t", "a", "truth", "estimate", "bandwidth"],
        s.density
            .iter()
            .map(|r| vec![num(r.t), num(r.a), num(r.truth), num(r.estimate), num(r.bandwidth.0)]),
    )?;
    write_csv(
        &dir.join(SURFACE_INTENSITY_FILE),
        &["t", "a", "truth", "estimate", "bandwidth_time", "bandwidth_age"],
        s.intensity.iter().map(|r| {
            vec![
                num(r.t),
                num(r.a),
                num(r.truth),
                num(r.estimate),
                num(r.bandwidth.0),
                num(r.bandwidth.1.unwrap_or(f64::NAN)),
            ]
        }),
    )
}

pub fn write_tails(dir: &Path, tails: &[TailSummary]) -> Result<(), ExperimentError> {
    write_csv(
        &dir.join(TAIL_SAMPLES_FILE),
        &["N", "replication", "normalized_discrepancy"],
        tails.iter().flat_map(|t| {
            t.samples
                .iter()
                .enumerate()
                .map(move |(i, &x)| vec![t.scale.to_string(), i.to_string(), num(x)])
        }),
    )?;
    write_csv(
        &dir.join(TAIL_TABLE_FILE),
        &["N", "u", "empirical_tail", "envelope"],
        tails.iter().flat_map(|t| {
            t.tail
                .iter()
                .map(move |r| vec![t.scale.to_string(), num(r.u), num(r.empirical), num(r.envelope)])
        }),
    )?;
    write_csv(
        &dir.join(TAIL_SUMMARY_FILE),
        &["N", "median", "fitted_rate", "decay_rate"],
        tails.iter().map(|t| {
            vec![
                t.scale.to_string(),
                num(t.median),
                num(t.fitted_rate),
                t.decay_rate.map(num).unwrap_or_else(|| "nan".into()),
            ]
        }),
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| ExperimentError::io(&d, e))? {
            let path = entry.map_err(|e| ExperimentError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `manifest.toml`: tool version, command, seed, the SHA-256 of the
/// resolved configuration and of every other file in `dir`. Nothing
/// run-specific (time, thread count, host) is recorded.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, config_toml: &str) -> Result<(), ExperimentError> {
    let mut text = String::new();
    text.push_str(&format!("tool = \"agepop\"\nversion = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("command = \"{command}\"\nseed = {seed}\n"));
    text.push_str(&format!("config_sha256 = \"{}\"\n\n[files]\n", sha256_hex(config_toml.as_bytes())));
    for path in files_under(dir)? {
        let rel = path.strip_prefix(dir).expect("file under dir");
        if rel == Path::new(MANIFEST_FILE) {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| ExperimentError::io(&path, e))?;
        let key = rel.to_string_lossy().replace('\\', "/");
        text.push_str(&format!("\"{key}\" = \"{}\"\n", sha256_hex(&bytes)));
    }
    write_text(&dir.join(MANIFEST_FILE), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_and_numbers() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(&dir.path().join("x.csv"), &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        write_manifest(dir.path(), "test", 7, "seed = 7\n").unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let parsed: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(parsed["seed"].as_integer(), Some(7));
        let files = parsed["files"].as_table().unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files["x.csv"].as_str().unwrap(), sha256_hex(b"a,b\n1,2\n"));
    }
}
