//! Manifests, CSV rows and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

use qkdlab_core::sweep::OperatingPoint;

use crate::OutputArgs;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Envelope shared by every JSON manifest.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize, R: Serialize> {
    pub format_version: u32,
    pub tool: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
    pub config: &'a C,
    pub result: R,
}

impl<'a, C: Serialize, R: Serialize> Manifest<'a, C, R> {
    pub fn new(command: &'static str, output: &OutputArgs, config: &'a C, result: R) -> Self {
        let created_unix_s = (!output.deterministic).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            tool: concat!("qkdlab ", env!("CARGO_PKG_VERSION")),
            command,
            created_unix_s,
            config,
            result,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("manifests serialize");
    s.push('\n');
    s
}

/// Writes `name` under the output directory, creating it if needed.
pub fn write_file(output: &OutputArgs, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = &output.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn write_path(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub const SUMMARY_HEADER: &str = "loss_db,mode,mu1,mu2,p_mu1,n_z,m_z,n_x,m_x,qber_z,qber_x,\
s_z0_lower,s_z1_lower,phi_z_upper,lambda_ec,key_length,skr_bps";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub fn summary_row(p: &OperatingPoint, mode: &str) -> String {
    let t = &p.tallies;
    let r = &p.report;
    format!(
        "{},{mode},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        p.loss_db,
        p.params.mu1,
        p.params.mu2,
        p.params.p_mu[0],
        t.n_z(),
        t.m_z(),
        t.n_x(),
        t.m_x(),
        opt(p.qber_z),
        opt(p.qber_x),
        r.s_z0_lower,
        r.s_z1_lower,
        r.phi_z_upper,
        r.lambda_ec,
        r.key_length_l,
        r.skr
    )
}

/// Sweep table: one row per detector and loss, failures kept in place.
pub fn sweep_table(rows: &[(String, f64, Result<OperatingPoint, String>)], mode: &str) -> String {
    let empty_cells = ",".repeat(SUMMARY_HEADER.matches(',').count());
    let mut out = format!("detector,status,{SUMMARY_HEADER}\n");
    for (name, loss, point) in rows {
        match point {
            Ok(p) => writeln!(out, "{name},ok,{}", summary_row(p, mode)),
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let mut cells = empty_cells.clone();
                cells.insert_str(0, &format!("{loss}"));
                writeln!(out, "{name},error: {msg},{cells}")
            }
        }
        .expect("writing to a String");
    }
    out
}

/// Gnuplot-style blocks, one per detector.
pub fn plot_data(rows: &[(String, f64, Result<OperatingPoint, String>)]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for (name, loss, point) in rows {
        if current != Some(name.as_str()) {
            if current.is_some() {
                out.push_str("\n\n");
            }
            writeln!(out, "# detector {name}\n# loss_db skr_bps qber_z qber_x").expect("String");
            current = Some(name);
        }
        match point {
            Ok(p) => writeln!(
                out,
                "{loss} {} {} {}",
                p.skr(),
                p.qber_z.unwrap_or(f64::NAN),
                p.qber_x.unwrap_or(f64::NAN)
            ),
            Err(_) => writeln!(out, "{loss} NaN NaN NaN"),
        }
        .expect("String");
    }
    out
}

/// Key-rate ratio of the first detector to each of the others, per loss.
pub fn ratio_table(names: &[String], losses: &[f64], rows: &[(String, f64, Result<OperatingPoint, String>)]) -> String {
    let skr = |d: usize, l: usize| rows[d * losses.len() + l].2.as_ref().map_or(f64::NAN, |p| p.skr());
    let mut out = String::from("loss_db");
    for other in &names[1..] {
        write!(out, ",{}/{other}", names[0]).expect("String");
    }
    out.push('\n');
    for (l, loss) in losses.iter().enumerate() {
        write!(out, "{loss}").expect("String");
        for d in 1..names.len() {
            write!(out, ",{}", skr(0, l) / skr(d, l)).expect("String");
        }
        out.push('\n');
    }
    out
}
