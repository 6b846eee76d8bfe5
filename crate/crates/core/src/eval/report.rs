use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::Variant;
use crate::error::{arg, Error, Result};
use crate::volume::{FluidClass, Vendor};

/// Mean Dice of the human graders, printed under every table.
pub const HUMAN_BASELINE: f64 = 0.71;

pub const CSV_HEADER: [&str; 8] = ["dimension", "model", "variant", "vendor", "fluid", "dice", "fold", "n_volumes"];

pub const DIMENSIONS: [&str; 3] = ["2D", "2.5D", "3D"];

const MISSING: &str = "—";

/// One (vendor, fluid) score of one model configuration on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRecord {
    /// `2D`, `2.5D` or `3D`.
    pub dimension: String,
    pub model: String,
    pub variant: Variant,
    pub vendor: Vendor,
    pub fluid: FluidClass,
    pub dice: f64,
    pub fold: usize,
    pub n_volumes: usize,
}

impl DiceRecord {
    fn validate(&self) -> Result<()> {
        if !DIMENSIONS.contains(&self.dimension.as_str()) {
            return arg(format!("unknown dimension {:?}", self.dimension));
        }
        if self.fluid == FluidClass::Background {
            return arg("records cover fluid classes only");
        }
        if !(0.0..=1.0).contains(&self.dice) {
            return arg(format!("dice {} outside [0, 1]", self.dice));
        }
        if self.model.is_empty() || self.model.contains(char::is_whitespace) {
            return arg(format!("bad model tag {:?}", self.model));
        }
        Ok(())
    }

    fn row_key(&self) -> (usize, &str, Variant) {
        (dim_rank(&self.dimension), &self.model, self.variant)
    }

    fn sort_key(&self) -> (usize, &str, Variant, usize, Vendor, FluidClass) {
        (dim_rank(&self.dimension), &self.model, self.variant, self.fold, self.vendor, self.fluid)
    }
}

fn dim_rank(d: &str) -> usize {
    DIMENSIONS.iter().position(|&x| x == d).unwrap_or(DIMENSIONS.len())
}

/// Two decimals, halves rounded up.
pub fn round2(x: f64) -> String {
    // the epsilon absorbs binary error in values like 0.745
    format!("{:.2}", ((x * 100.0 + 0.5 + 1e-9).floor() / 100.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub markdown: String,
    pub csv: String,
}

/// Table cells average the fold scores of a row, weighted by each fold's
/// test-set size.
pub fn table_cells(records: &[DiceRecord]) -> BTreeMap<(usize, String, Variant), BTreeMap<(Vendor, FluidClass), f64>> {
    let mut acc: BTreeMap<(usize, String, Variant), BTreeMap<(Vendor, FluidClass), (f64, usize)>> = BTreeMap::new();
    let mut sorted: Vec<&DiceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    for r in sorted {
        let (d, m, v) = r.row_key();
        let cell = acc
            .entry((d, m.to_string(), v))
            .or_default()
            .entry((r.vendor, r.fluid))
            .or_insert((0.0, 0));
        cell.0 += r.dice * r.n_volumes as f64;
        cell.1 += r.n_volumes;
    }
    acc.into_iter()
        .map(|(k, cells)| {
            let cells = cells
                .into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(c, (s, n))| (c, s / n as f64))
                .collect();
            (k, cells)
        })
        .collect()
}

pub fn render_report(records: &[DiceRecord]) -> Result<RenderedReport> {
    if records.is_empty() {
        return arg("nothing to report");
    }
    for r in records {
        r.validate()?;
    }
    let mut md = String::new();
    md.push_str("| Dimension | Model |");
    for v in Vendor::ALL {
        for f in FluidClass::FLUIDS {
            let _ = write!(md, " {v} {f} |");
        }
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---:|".repeat(Vendor::ALL.len() * FluidClass::FLUIDS.len()));
    md.push('\n');
    for ((d, model, variant), cells) in table_cells(records) {
        let _ = write!(md, "| {} | {model}_{variant} |", DIMENSIONS[d]);
        for v in Vendor::ALL {
            for f in FluidClass::FLUIDS {
                match cells.get(&(v, f)) {
                    Some(&x) => {
                        let _ = write!(md, " {} |", round2(x));
                    }
                    None => {
                        let _ = write!(md, " {MISSING} |");
                    }
                }
            }
        }
        md.push('\n');
    }
    let _ = writeln!(md, "\nHuman grader baseline (mean Dice): {HUMAN_BASELINE:.2}");
    Ok(RenderedReport { markdown: md, csv: render_csv(records)? })
}

pub fn render_csv(records: &[DiceRecord]) -> Result<String> {
    let mut sorted: Vec<&DiceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let fail = |e: csv::Error| Error::Format(format!("writing report csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(fail)?;
    for r in sorted {
        w.write_record([
            r.dimension.clone(),
            r.model.clone(),
            r.variant.to_string(),
            r.vendor.to_string(),
            r.fluid.to_string(),
            r.dice.to_string(),
            r.fold.to_string(),
            r.n_volumes.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("writing report csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<DiceRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Format(format!("report csv: {e}")))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("report csv: {e}")))?;
        let bad = |field: &str| Error::Format(format!("report csv row {}: bad {field}", line + 1));
        if rec.len() != CSV_HEADER.len() {
            return Err(bad("field count"));
        }
        let record = DiceRecord {
            dimension: rec[0].to_string(),
            model: rec[1].to_string(),
            variant: rec[2].parse().map_err(|_| bad("variant"))?,
            vendor: rec[3].parse().map_err(|_| bad("vendor"))?,
            fluid: rec[4].parse().map_err(|_| bad("fluid"))?,
            dice: rec[5].parse().map_err(|_| bad("dice"))?,
            fold: rec[6].parse().map_err(|_| bad("fold"))?,
            n_volumes: rec[7].parse().map_err(|_| bad("n_volumes"))?,
        };
        record.validate().map_err(|e| Error::Format(format!("report csv row {}: {e}", line + 1)))?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dim: &str, model: &str, variant: Variant, vendor: Vendor, fluid: FluidClass, dice: f64) -> DiceRecord {
        DiceRecord {
            dimension: dim.into(),
            model: model.into(),
            variant,
            vendor,
            fluid,
            dice,
            fold: 0,
            n_volumes: 8,
        }
    }

    fn unet_f_cirrus() -> Vec<DiceRecord> {
        [(FluidClass::Irf, 0.75), (FluidClass::Srf, 0.74), (FluidClass::Ped, 0.68)]
            .into_iter()
            .map(|(f, d)| rec("2D", "unet", Variant::F, Vendor::Cirrus, f, d))
            .collect()
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(round2(0.745), "0.75");
        assert_eq!(round2(0.744999), "0.74");
        assert_eq!(round2(1.0), "1.00");
        assert_eq!(round2(0.0), "0.00");
        assert_eq!(round2(0.125), "0.13");
    }

    #[test]
    fn table_position_and_missing_cells() {
        let r = render_report(&unet_f_cirrus()).unwrap();
        let row = r.markdown.lines().find(|l| l.contains("unet_F")).unwrap();
        assert_eq!(
            row,
            "| 2D | unet_F | 0.75 | 0.74 | 0.68 | — | — | — | — | — | — |"
        );
        assert!(r.markdown.contains("0.71"));
    }

    #[test]
    fn rows_grouped_f_before_p() {
        let mut rs = vec![
            rec("3D", "unet", Variant::P, Vendor::Topcon, FluidClass::Irf, 0.5),
            rec("2D", "unet", Variant::P, Vendor::Topcon, FluidClass::Irf, 0.5),
            rec("3D", "unet", Variant::F, Vendor::Topcon, FluidClass::Irf, 0.5),
        ];
        rs.extend(unet_f_cirrus());
        let md = render_report(&rs).unwrap().markdown;
        let labels: Vec<String> = md
            .lines()
            .skip(2)
            .take_while(|l| l.starts_with('|'))
            .map(|l| l.split('|').take(3).collect::<Vec<_>>().join("|"))
            .collect();
        assert_eq!(labels, ["| 2D | unet_F ", "| 2D | unet_P ", "| 3D | unet_F ", "| 3D | unet_P "]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rs = unet_f_cirrus();
        rs.push(rec("2.5D", "threshold", Variant::P, Vendor::Spectralis, FluidClass::Ped, 0.1 + 0.2));
        rs[0].dice = 2.0 / 3.0;
        let csv = render_csv(&rs).unwrap();
        let back = parse_csv(&csv).unwrap();
        assert_eq!(render_csv(&back).unwrap(), csv);
        let find = |d: f64| back.iter().any(|r| r.dice.to_bits() == d.to_bits());
        assert!(find(2.0 / 3.0) && find(0.1 + 0.2));
    }

    #[test]
    fn fold_weighting() {
        let mut a = rec("2D", "m", Variant::P, Vendor::Topcon, FluidClass::Srf, 1.0);
        let mut b = a.clone();
        a.n_volumes = 8;
        b.fold = 1;
        b.n_volumes = 6;
        b.dice = 0.0;
        let cells = table_cells(&[a, b]);
        let v = cells.values().next().unwrap()[&(Vendor::Topcon, FluidClass::Srf)];
        assert!((v - 8.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(render_report(&[]).is_err());
        let mut r = unet_f_cirrus();
        r[0].dice = 1.5;
        assert!(render_report(&r).is_err());
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }
}
