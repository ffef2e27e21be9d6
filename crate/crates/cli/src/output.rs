//! JSON and CSV writers with 17 significant digits, and the run manifest.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use hypgl::bundle::BundleData;
use hypgl::cuspforms::{dim_cusp_forms, dim_cusp_forms_classical};
use hypgl::group::CongruenceSurface;
use num_rational::Ratio;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::RunConfig;
use crate::error::Result;

/// Scientific notation with 16 digits after the point; round-trips every `f64`.
/// Negative zero prints as zero.
pub fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x + 0.0)
    } else {
        format!("{x}")
    }
}

/// Pretty printing with every float in [`sci`] form; non-finite values become `null`.
struct SciFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{:.16e}", value + 0.0)
        } else {
            w.write_all(b"null")
        }
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub versions: Versions,
    pub exact: ExactValues,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
pub struct Versions {
    pub hypgl: &'static str,
    pub hypgl_cli: &'static str,
}

/// Formula-level values of the run, as exact strings where rational.
#[derive(Serialize)]
pub struct ExactValues {
    pub level: u64,
    pub cusp_count: u64,
    pub genus: u64,
    pub area_over_pi: String,
    pub coset_count: usize,
    pub bundle: Option<BundleExact>,
}

#[derive(Serialize)]
pub struct BundleExact {
    pub degree: u64,
    pub b: String,
    pub weight: String,
    pub ess_bottom: String,
    pub dim_cusp_forms: Option<u64>,
    pub dim_counting_formula: Option<u64>,
}

impl ExactValues {
    pub fn new(surface: &CongruenceSurface, bundle: Option<&BundleData>) -> Self {
        let bundle = bundle.map(|bd| {
            let b = bd.b_ratio();
            let k = b * 2;
            let ess = Ratio::new(1, 4) + b * b;
            // only even integer weights have a cusp-form count
            let dims = k.is_integer().then(|| (dim_cusp_forms_classical(surface, k.to_integer()).ok(), dim_cusp_forms(surface, k.to_integer()).ok()));
            let (dim, formula) = dims.unwrap_or((None, None));
            BundleExact {
                degree: bd.degree,
                b: b.to_string(),
                weight: k.to_string(),
                ess_bottom: ess.to_string(),
                dim_cusp_forms: dim,
                dim_counting_formula: formula,
            }
        });
        ExactValues {
            level: surface.level,
            cusp_count: surface.cusp_count,
            genus: surface.genus,
            area_over_pi: surface.area_over_pi.to_string(),
            coset_count: surface.coset_count(),
            bundle,
        }
    }
}

pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig, exact: ExactValues, outputs: &[&str]) -> Result<()> {
    let m = Manifest {
        command,
        config,
        versions: Versions { hypgl: hypgl::VERSION, hypgl_cli: env!("CARGO_PKG_VERSION") },
        exact,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&dir.join("manifest.json"), &m)
}
