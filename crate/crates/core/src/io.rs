//! Density, grid and instance files.
//!
//! JSON densities look like
//! `{"grid_x": {"min": 0, "max": 1, "n": 8}, "grid_y": {...}, "values": [...]}`
//! with `values` either flat row-major or nested by x-cell; without
//! `grid_y` the file holds a 1D density.
//!
//! CSV grids carry their geometry: the header is `x_lo,x_hi` followed by the
//! `ny + 1` y-nodes, and each data row is one x-cell as `x_lo,x_hi` followed
//! by its `ny` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::measures::{DiscreteDensity1D, DiscreteDensity2D, Grid1D};
use crate::oracle::TransportInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridSpec {
    fn grid(&self) -> Result<Grid1D> {
        Grid1D::uniform(self.min, self.max, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityFile {
    pub grid_x: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_y: Option<GridSpec>,
    pub values: Values,
}

impl DensityFile {
    fn flat_values(&self, ny: usize) -> Result<Vec<f64>> {
        match &self.values {
            Values::Flat(v) => Ok(v.clone()),
            Values::Nested(rows) => {
                if rows.iter().any(|r| r.len() != ny) {
                    return Err(Error::Parse(format!(
                        "every row of values must have {ny} entries"
                    )));
                }
                Ok(rows.concat())
            }
        }
    }

    pub fn to_density_2d(&self) -> Result<DiscreteDensity2D> {
        let gy = self
            .grid_y
            .ok_or_else(|| Error::Parse("2D density needs grid_y".into()))?;
        let values = self.flat_values(gy.n)?;
        DiscreteDensity2D::new(self.grid_x.grid()?, gy.grid()?, values)
    }

    pub fn to_density_1d(&self) -> Result<DiscreteDensity1D> {
        if self.grid_y.is_some() {
            return Err(Error::Parse("1D density must not have grid_y".into()));
        }
        let values = match &self.values {
            Values::Flat(v) => v.clone(),
            Values::Nested(_) => return Err(Error::Parse("1D values must be a flat array".into())),
        };
        DiscreteDensity1D::new(self.grid_x.grid()?, values)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn parse_density_2d_json(text: &str) -> Result<DiscreteDensity2D> {
    let file: DensityFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("density JSON: {e}")))?;
    file.to_density_2d()
}

pub fn parse_density_1d_json(text: &str) -> Result<DiscreteDensity1D> {
    let file: DensityFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("density JSON: {e}")))?;
    file.to_density_1d()
}

/// Reads a 2D density from a `.csv` grid or a JSON density file.
pub fn read_density_2d(path: &Path) -> Result<DiscreteDensity2D> {
    let text = read(path)?;
    if is_csv(path) {
        let (gx, gy, field) = parse_grid_csv(&text)?;
        DiscreteDensity2D::new(gx, gy, field.values)
    } else {
        parse_density_2d_json(&text)
    }
}

fn grid_to_spec(g: &Grid1D) -> Option<GridSpec> {
    let spec = GridSpec {
        min: g.min(),
        max: g.max(),
        n: g.cells(),
    };
    spec.grid()
        .ok()
        .filter(|u| u.approx_eq(g, 1e-12))
        .map(|_| spec)
}

/// JSON form of a density on uniform grids.
pub fn density_2d_to_json(d: &DiscreteDensity2D) -> Result<String> {
    let (Some(grid_x), Some(grid_y)) = (grid_to_spec(d.grid_x()), grid_to_spec(d.grid_y())) else {
        return Err(Error::InvalidGrid(
            "JSON densities need uniform grids".into(),
        ));
    };
    let file = DensityFile {
        grid_x,
        grid_y: Some(grid_y),
        values: Values::Flat(d.values().to_vec()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// CSV text of `field` on the cells of `grid_x x grid_y`.
pub fn grid_csv(grid_x: &Grid1D, grid_y: &Grid1D, field: &GridField) -> Result<String> {
    if field.nx != grid_x.cells() || field.ny != grid_y.cells() {
        return Err(Error::GridMismatch(format!(
            "field is {}x{}, grid is {}x{}",
            field.nx,
            field.ny,
            grid_x.cells(),
            grid_y.cells()
        )));
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(format!("CSV: {e}"));
    let mut header = vec!["x_lo".to_string(), "x_hi".to_string()];
    header.extend(grid_y.nodes().iter().map(|v| v.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    let xn = grid_x.nodes();
    for i in 0..field.nx {
        let mut rec = vec![xn[i].to_string(), xn[i + 1].to_string()];
        rec.extend(field.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Parse(format!("CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_grid_csv(
    path: &Path,
    grid_x: &Grid1D,
    grid_y: &Grid1D,
    field: &GridField,
) -> Result<()> {
    fs::write(path, grid_csv(grid_x, grid_y, field)?)?;
    Ok(())
}

fn number(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("CSV {what}: cannot parse {s:?} as a number")))
}

/// Parses a CSV grid back into its grids and field.
pub fn parse_grid_csv(text: &str) -> Result<(Grid1D, Grid1D, GridField)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse("CSV grid is empty".into()))?
        .map_err(|e| Error::Parse(format!("CSV: {e}")))?;
    if header.len() < 4 {
        return Err(Error::Parse(
            "CSV header needs x_lo,x_hi and at least two y-nodes".into(),
        ));
    }
    let y_nodes = header
        .iter()
        .skip(2)
        .map(|s| number(s, "header"))
        .collect::<Result<Vec<_>>>()?;
    let ny = y_nodes.len() - 1;
    let mut x_nodes = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
        if rec.len() != ny + 2 {
            return Err(Error::Parse(format!(
                "CSV row {} has {} fields, expected {}",
                row + 1,
                rec.len(),
                ny + 2
            )));
        }
        let lo = number(&rec[0], "x_lo")?;
        let hi = number(&rec[1], "x_hi")?;
        match x_nodes.last() {
            None => x_nodes.push(lo),
            Some(&prev) => {
                if (prev - lo).abs() > 1e-12 * (1.0 + prev.abs()) {
                    return Err(Error::Parse(format!(
                        "CSV row {}: x cells are not contiguous",
                        row + 1
                    )));
                }
            }
        }
        x_nodes.push(hi);
        for s in rec.iter().skip(2) {
            values.push(number(s, "value")?);
        }
    }
    if x_nodes.is_empty() {
        return Err(Error::Parse("CSV grid has no data rows".into()));
    }
    let nx = x_nodes.len() - 1;
    Ok((
        Grid1D::new(x_nodes)?,
        Grid1D::new(y_nodes)?,
        GridField::from_values(nx, ny, values),
    ))
}

pub fn read_instance(path: &Path) -> Result<TransportInstance> {
    let text = read(path)?;
    let inst: TransportInstance =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("instance JSON: {e}")))?;
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_flat_json_agree() {
        let a = parse_density_2d_json(
            r#"{"grid_x":{"min":0,"max":1,"n":2},"grid_y":{"min":0,"max":1,"n":2},"values":[1,2,3,4]}"#,
        )
        .unwrap();
        let b = parse_density_2d_json(
            r#"{"grid_x":{"min":0,"max":1,"n":2},"grid_y":{"min":0,"max":1,"n":2},"values":[[1,2],[3,4]]}"#,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!((a.correction() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_density_2d_json("{"), Err(Error::Parse(_))));
        let r = parse_density_2d_json(r#"{"grid_x":{"min":0,"max":1,"n":2},"values":[1,1]}"#);
        assert!(matches!(r, Err(Error::Parse(_))));
    }

    #[test]
    fn one_d_json() {
        let d =
            parse_density_1d_json(r#"{"grid_x":{"min":0,"max":2,"n":2},"values":[1,3]}"#).unwrap();
        assert_eq!(d.masses(), vec![0.25, 0.75]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let gx = Grid1D::new(vec![0.0, 0.1, 0.35, 1.0]).unwrap();
        let gy = Grid1D::uniform(-1.0, 1.0, 2).unwrap();
        let f = GridField::from_values(3, 2, vec![0.1, 1.0 / 3.0, 2.5e-17, 7.0, 0.0, 1e10]);
        let text = grid_csv(&gx, &gy, &f).unwrap();
        let (px, py, pf) = parse_grid_csv(&text).unwrap();
        assert_eq!(px, gx);
        assert_eq!(py, gy);
        assert_eq!(pf, f);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "x_lo,x_hi,0,1,2\n0,1,0.5\n";
        assert!(matches!(parse_grid_csv(text), Err(Error::Parse(_))));
    }
}
