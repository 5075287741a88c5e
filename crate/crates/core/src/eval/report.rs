//! Report files.
//!
//! The structured files are `key=value` lines, one per fact, with `#`
//! comments. IoU values are percentages written with full round-trip
//! precision; pixel counts are integers.
//!
//! ```text
//! kind=eval
//! config_hash=<hex>
//! seconds=12.5
//! iou_empty=100            # IoU of an image with no building in prediction or truth
//! miou=71.93               # mean of per-image IoU
//! miou_city_mean=70.12     # mean of per-city pooled IoU
//! images=2
//! image.0.id=SynB_00000
//! image.0.city=SynB
//! image.0.tp=...  image.0.fp=...  image.0.fn=...  image.0.tn=...
//! city.0.name=SynB
//! city.0.images=2
//! city.0.tp=...   (fp, fn, tn, iou likewise)
//! ```
//!
//! Ablation files start with `kind=ablation` and `rows=<n>`, then each row
//! `row.<i>.name`, `.protocol_hash`, `.wall_seconds`, `.status` (`ok` or
//! `failed`) and either `.error` or the row's evaluation report keys under
//! the `row.<i>.` prefix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::metrics::{CityScore, ConfusionCounts, EvalReport, ImageScore};
use super::{AblationRow, AblationTable};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.txt";
pub const ABLATION_FILE: &str = "ablation.txt";

fn kv(out: &mut String, key: impl std::fmt::Display, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

fn write_counts(out: &mut String, prefix: &str, c: &ConfusionCounts) {
    kv(out, format_args!("{prefix}tp"), c.tp);
    kv(out, format_args!("{prefix}fp"), c.fp);
    kv(out, format_args!("{prefix}fn"), c.fn_);
    kv(out, format_args!("{prefix}tn"), c.tn);
}

fn write_report_keys(out: &mut String, prefix: &str, r: &EvalReport) {
    kv(out, format_args!("{prefix}config_hash"), &r.config_hash);
    kv(out, format_args!("{prefix}seconds"), r.seconds);
    kv(out, format_args!("{prefix}iou_empty"), 100);
    kv(out, format_args!("{prefix}miou"), r.miou());
    kv(out, format_args!("{prefix}miou_city_mean"), r.miou_city_mean());
    kv(out, format_args!("{prefix}images"), r.images.len());
    for (i, img) in r.images.iter().enumerate() {
        kv(out, format_args!("{prefix}image.{i}.id"), &img.id);
        kv(out, format_args!("{prefix}image.{i}.city"), &img.city);
        write_counts(out, &format!("{prefix}image.{i}."), &img.counts);
        kv(out, format_args!("{prefix}image.{i}.iou"), 100.0 * img.iou());
    }
    kv(out, format_args!("{prefix}cities"), r.cities.len());
    for (i, c) in r.cities.iter().enumerate() {
        kv(out, format_args!("{prefix}city.{i}.name"), &c.city);
        kv(out, format_args!("{prefix}city.{i}.images"), c.images);
        write_counts(out, &format!("{prefix}city.{i}."), &c.counts);
        kv(out, format_args!("{prefix}city.{i}.iou"), c.iou_percent());
    }
}

pub fn report_to_string(r: &EvalReport) -> String {
    let mut out = String::from("# building extraction evaluation\nkind=eval\n");
    write_report_keys(&mut out, "", r);
    out
}

pub fn ablation_to_string(t: &AblationTable) -> String {
    let mut out = String::from("# submodule ablation\nkind=ablation\n");
    kv(&mut out, "rows", t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let p = format!("row.{i}.");
        kv(&mut out, format_args!("{p}name"), row.submodules);
        kv(&mut out, format_args!("{p}protocol_hash"), &row.protocol_hash);
        kv(&mut out, format_args!("{p}wall_seconds"), row.seconds);
        match &row.outcome {
            Ok(r) => {
                kv(&mut out, format_args!("{p}status"), "ok");
                write_report_keys(&mut out, &p, r);
            }
            Err(e) => {
                kv(&mut out, format_args!("{p}status"), "failed");
                kv(&mut out, format_args!("{p}error"), e.replace('\n', " "));
            }
        }
    }
    out
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Report(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Fields(map))
    }

    fn str(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Report(format!("missing key {key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key)?;
        v.parse().map_err(|_| Error::Report(format!("{key}: cannot parse {v:?}")))
    }

    fn counts(&self, prefix: &str) -> Result<ConfusionCounts> {
        Ok(ConfusionCounts {
            tp: self.num(&format!("{prefix}tp"))?,
            fp: self.num(&format!("{prefix}fp"))?,
            fn_: self.num(&format!("{prefix}fn"))?,
            tn: self.num(&format!("{prefix}tn"))?,
        })
    }

    fn report(&self, prefix: &str) -> Result<EvalReport> {
        let n: usize = self.num(&format!("{prefix}images"))?;
        let images = (0..n)
            .map(|i| {
                let p = format!("{prefix}image.{i}.");
                Ok(ImageScore {
                    id: self.str(&format!("{p}id"))?.to_string(),
                    city: self.str(&format!("{p}city"))?.to_string(),
                    counts: self.counts(&p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m: usize = self.num(&format!("{prefix}cities"))?;
        let cities = (0..m)
            .map(|i| {
                let p = format!("{prefix}city.{i}.");
                Ok(CityScore {
                    city: self.str(&format!("{p}name"))?.to_string(),
                    images: self.num(&format!("{p}images"))?,
                    counts: self.counts(&p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            images,
            cities,
            config_hash: self.str(&format!("{prefix}config_hash"))?.to_string(),
            seconds: self.num(&format!("{prefix}seconds"))?,
        })
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.str("kind")? {
            k if k == kind => Ok(()),
            other => Err(Error::Report(format!("expected kind={kind}, found kind={other}"))),
        }
    }
}

pub fn parse_report(text: &str) -> Result<EvalReport> {
    let f = Fields::parse(text)?;
    f.expect_kind("eval")?;
    f.report("")
}

pub fn parse_ablation(text: &str) -> Result<AblationTable> {
    let f = Fields::parse(text)?;
    f.expect_kind("ablation")?;
    let n: usize = f.num("rows")?;
    let rows = (0..n)
        .map(|i| {
            let p = format!("row.{i}.");
            let outcome = match f.str(&format!("{p}status"))? {
                "ok" => Ok(f.report(&p)?),
                "failed" => Err(f.str(&format!("{p}error"))?.to_string()),
                other => return Err(Error::Report(format!("{p}status: unknown value {other:?}"))),
            };
            Ok(AblationRow {
                submodules: f.str(&format!("{p}name"))?.parse()?,
                protocol_hash: f.str(&format!("{p}protocol_hash"))?.to_string(),
                seconds: f.num(&format!("{p}wall_seconds"))?,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

/// Percent with two decimals.
fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_report_table(r: &EvalReport) -> String {
    let mut rows = vec![vec!["city".to_string(), "images".into(), "IoU".into()]];
    for c in &r.cities {
        rows.push(vec![c.city.clone(), c.images.to_string(), pct(c.iou_percent())]);
    }
    rows.push(vec!["mIoU (per-image mean)".into(), r.images.len().to_string(), pct(r.miou())]);
    rows.push(vec!["mIoU (city mean)".into(), r.cities.len().to_string(), pct(r.miou_city_mean())]);
    pad_table(&rows)
}

fn ablation_cities(t: &AblationTable) -> Vec<String> {
    let mut cities: Vec<String> = t
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .flat_map(|r| r.cities.iter().map(|c| c.city.clone()))
        .collect();
    cities.sort();
    cities.dedup();
    cities
}

pub fn render_ablation_table(t: &AblationTable) -> String {
    let cities = ablation_cities(t);
    let mut header = vec!["submodules".to_string(), "mIoU".into()];
    header.extend(cities.iter().cloned());
    header.push("time (s)".into());
    let mut rows = vec![header];
    for row in &t.rows {
        let mut line = vec![row.submodules.to_string()];
        match &row.outcome {
            Ok(r) => {
                line.push(pct(r.miou()));
                for c in &cities {
                    line.push(r.city(c).map_or_else(|| "-".into(), |s| pct(s.iou_percent())));
                }
            }
            Err(e) => {
                line.push("failed".into());
                line.extend(cities.iter().map(|_| "-".to_string()));
                line.push(format!("{:.1}", row.seconds));
                line.push(e.clone());
                rows.push(line);
                continue;
            }
        }
        line.push(format!("{:.1}", row.seconds));
        rows.push(line);
    }
    pad_table(&rows)
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// Grouped bar chart: one group per entry of `groups`, one coloured bar per
/// series value (0–100), with faint gridlines every 10 points.
pub fn bar_chart(groups: &[Vec<f64>]) -> RgbImage {
    const BAR: u32 = 14;
    const GAP: u32 = 18;
    const H: u32 = 220;
    const MARGIN: u32 = 10;
    let series = groups.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let width = (2 * MARGIN + groups.len() as u32 * (series * BAR + GAP)).max(64);
    let height = H + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for tick in 0..=10 {
        let y = MARGIN + H - tick * H / 10;
        for x in 0..width {
            img.put_pixel(x, y, Rgb([225, 225, 225]));
        }
    }
    for (g, values) in groups.iter().enumerate() {
        let x0 = MARGIN + GAP / 2 + g as u32 * (series * BAR + GAP);
        for (s, &v) in values.iter().enumerate() {
            let bar_h = ((v.clamp(0.0, 100.0) / 100.0) * H as f64).round() as u32;
            let color = Rgb(PALETTE[s % PALETTE.len()]);
            for x in x0 + s as u32 * BAR..x0 + (s as u32 + 1) * BAR - 2 {
                for y in MARGIN + H - bar_h..MARGIN + H {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_chart(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `report.txt`, `report_table.txt` and `report_chart.png` (per-city
/// IoU bars) into `dir`.
pub fn emit_report(r: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let paths = [dir.join(REPORT_FILE), dir.join("report_table.txt"), dir.join("report_chart.png")];
    write(&paths[0], &report_to_string(r))?;
    write(&paths[1], &render_report_table(r))?;
    let groups: Vec<Vec<f64>> = r.cities.iter().map(|c| vec![c.iou_percent()]).collect();
    save_chart(&paths[2], &bar_chart(&groups))?;
    Ok(paths.to_vec())
}

/// Writes `ablation.txt`, `ablation_table.txt` and `ablation_chart.png`
/// (one group per city, one bar per row) into `dir`.
pub fn emit_ablation(t: &AblationTable, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let paths = [dir.join(ABLATION_FILE), dir.join("ablation_table.txt"), dir.join("ablation_chart.png")];
    write(&paths[0], &ablation_to_string(t))?;
    write(&paths[1], &render_ablation_table(t))?;
    let groups: Vec<Vec<f64>> = ablation_cities(t)
        .iter()
        .map(|c| {
            t.rows
                .iter()
                .map(|row| {
                    row.outcome
                        .as_ref()
                        .ok()
                        .and_then(|r| r.city(c))
                        .map_or(0.0, CityScore::iou_percent)
                })
                .collect()
        })
        .collect();
    save_chart(&paths[2], &bar_chart(&groups))?;
    Ok(paths.to_vec())
}
