use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Dataset, Demonstration};

/// Positions and velocities collected for one demo id before validation.
struct Pending {
    id: String,
    t: Vec<f64>,
    pos: Vec<Vec<f64>>,
    vel: Vec<Vec<f64>>,
}

/// Number of state columns implied by a header, or a schema error.
fn parse_header(header: &csv::StringRecord) -> Result<(usize, bool), DataError> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "demo" || cols[1] != "t" {
        return Err(DataError::Schema(format!("header must start with `demo,t,x1`, got `{}`", cols.join(","))));
    }
    let rest = &cols[2..];
    let dim = rest.iter().take_while(|c| c.starts_with('x')).count();
    let with_vel = match rest.len() {
        n if n == dim => false,
        n if n == 2 * dim => true,
        _ => return Err(DataError::Schema(format!("unexpected columns `{}`", cols.join(",")))),
    };
    for i in 0..dim {
        if rest[i] != format!("x{}", i + 1) || (with_vel && rest[dim + i] != format!("v{}", i + 1)) {
            return Err(DataError::Schema(format!("unexpected columns `{}`", cols.join(","))));
        }
    }
    if dim == 0 {
        return Err(DataError::Schema("no position columns".into()));
    }
    Ok((dim, with_vel))
}

impl Dataset {
    /// Reads the dataset CSV at `path`; the dataset is named after the file stem.
    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_csv(file, name)
    }

    /// Parses `demo,t,x1..xd[,v1..vd]`. Rows are grouped by demo id in order
    /// of first appearance; missing velocities are filled by finite
    /// differences.
    pub fn read_csv<R: Read>(reader: R, name: impl Into<String>) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let (dim, with_vel) = parse_header(rdr.headers()?)?;
        let mut pending: Vec<Pending> = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 + dim * if with_vel { 2 } else { 1 } {
                return Err(DataError::Schema(format!("row {} has {} fields", row + 2, record.len())));
            }
            let num = |k: usize| -> Result<f64, DataError> {
                record[k]
                    .parse::<f64>()
                    .map_err(|_| DataError::Schema(format!("row {}: `{}` is not a number", row + 2, &record[k])))
            };
            let id = &record[0];
            let idx = match pending.iter().position(|p| p.id == id) {
                Some(i) => i,
                None => {
                    pending.push(Pending { id: id.to_string(), t: vec![], pos: vec![], vel: vec![] });
                    pending.len() - 1
                }
            };
            let entry = &mut pending[idx];
            entry.t.push(num(1)?);
            entry.pos.push((0..dim).map(|i| num(2 + i)).collect::<Result<_, _>>()?);
            if with_vel {
                entry.vel.push((0..dim).map(|i| num(2 + dim + i)).collect::<Result<_, _>>()?);
            }
        }
        let demos = pending
            .into_iter()
            .map(|p| {
                if with_vel {
                    Demonstration::new(p.id, p.t, p.pos, p.vel)
                } else {
                    Demonstration::from_positions(p.id, p.t, p.pos)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, demos)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        self.write_csv_to(file)
    }

    /// Writes all columns including velocities; values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["demo".to_string(), "t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.extend((1..=self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for d in &self.demos {
            for k in 0..d.len() {
                let mut row = vec![d.id.clone(), d.t[k].to_string()];
                row.extend(d.pos[k].iter().chain(&d.vel[k]).map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|source| DataError::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_without_velocities() {
        let text = "demo,t,x1,x2\n0,0,0,0\n0,0.5,1,2\n0,1,2,4\n1,0,1,1\n1,1,1,2\n1,2,1,3\n";
        let ds = Dataset::read_csv(text.as_bytes(), "toy").unwrap();
        assert_eq!(ds.dim, 2);
        assert_eq!(ds.demos.len(), 2);
        assert!((ds.demos[0].vel[1][1] - 4.0).abs() < 1e-12);
        assert!((ds.demos[1].vel[2][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let text = "demo,t,x1,v1\n7,0,0.1,0.30000000000000004\n7,0.1,1e-300,-2.5\n";
        let ds = Dataset::read_csv(text.as_bytes(), "x").unwrap();
        let mut out = Vec::new();
        ds.write_csv_to(&mut out).unwrap();
        let back = Dataset::read_csv(out.as_slice(), "x").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn bad_headers_rejected() {
        for text in ["t,demo,x1\n", "demo,t,x2\n", "demo,t,x1,x2,v1\n", "demo,t\n", "demo,t,x1,v2\n"] {
            assert!(matches!(Dataset::read_csv(text.as_bytes(), "b"), Err(DataError::Schema(_))), "{text}");
        }
    }

    #[test]
    fn non_numeric_and_non_monotone_rejected() {
        let text = "demo,t,x1\n0,0,a\n";
        assert!(matches!(Dataset::read_csv(text.as_bytes(), "b"), Err(DataError::Schema(_))));
        let text = "demo,t,x1,v1\n0,0,1,0\n0,0,2,0\n";
        assert!(matches!(Dataset::read_csv(text.as_bytes(), "b"), Err(DataError::NonMonotoneTime { .. })));
    }
}
