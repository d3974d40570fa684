//! Cross-run summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};

use crate::artifacts::{self, Manifest};

/// Summary of one finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: String,
    pub pretrained: bool,
    pub avg_mse: f64,
    /// Registry order.
    pub devices: Vec<(String, f64)>,
}

pub fn load_summary(run_dir: &Path) -> anyhow::Result<RunSummary> {
    let manifest = Manifest::load(&run_dir.join(artifacts::MANIFEST_FILE))?;
    let avg_path = run_dir.join(artifacts::SUMMARY_AVERAGE_FILE);
    let mut rdr = csv::Reader::from_path(&avg_path).with_context(|| format!("reading {}", avg_path.display()))?;
    let rec = rdr.records().next().context("empty average summary")??;
    let avg_mse: f64 = rec.get(3).context("missing avg_mse column")?.parse()?;
    let dev_path = run_dir.join(artifacts::SUMMARY_DEVICES_FILE);
    let mut rdr = csv::Reader::from_path(&dev_path).with_context(|| format!("reading {}", dev_path.display()))?;
    let mut devices = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        devices.push((rec.get(0).unwrap_or_default().to_owned(), rec.get(1).context("missing mse column")?.parse()?));
    }
    Ok(RunSummary { method: manifest.method, pretrained: manifest.pretrained, avg_mse, devices })
}

/// `method,pretrain_mse,non_pretrain_mse`, one row per method in first-seen
/// order; a cell stays empty when no run of that kind exists.
pub fn average_table(runs: &[RunSummary]) -> anyhow::Result<String> {
    let mut order: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, bool), f64> = BTreeMap::new();
    for r in runs {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
        if cells.insert((&r.method, r.pretrained), r.avg_mse).is_some() {
            bail!("two {} runs of {}", if r.pretrained { "pretrained" } else { "non-pretrained" }, r.method);
        }
    }
    let mut out = String::from("method,pretrain_mse,non_pretrain_mse\n");
    for m in order {
        let cell = |p| cells.get(&(m, p)).map(|v: &f64| v.to_string()).unwrap_or_default();
        writeln!(out, "{m},{},{}", cell(true), cell(false))?;
    }
    Ok(out)
}

/// `device,<method>...`, one column per run in the given order. Device rows
/// follow the first run.
pub fn device_table(runs: &[RunSummary]) -> anyhow::Result<String> {
    let Some(first) = runs.first() else { bail!("no runs to compare") };
    let mut out = String::from("device");
    for r in runs {
        let label = if runs.iter().filter(|o| o.method == r.method).count() > 1 && r.pretrained {
            format!("{} (pretrained)", r.method)
        } else {
            r.method.clone()
        };
        write!(out, ",{label}")?;
    }
    out.push('\n');
    let lookup: Vec<BTreeMap<&str, f64>> = runs.iter().map(|r| r.devices.iter().map(|(d, v)| (d.as_str(), *v)).collect()).collect();
    for (device, _) in &first.devices {
        out.push_str(device);
        for (r, map) in runs.iter().zip(&lookup) {
            let v = map.get(device.as_str()).with_context(|| format!("run {} has no device {device}", r.method))?;
            write!(out, ",{v}")?;
        }
        out.push('\n');
    }
    Ok(out)
}
