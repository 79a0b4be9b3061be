//! Maps between the input space and the latent space the transport runs in.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, PointTable};

/// On-disk form of an affine codec: `encode(x) = matrix · x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Codec {
    Identity,
    Affine {
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
        inverse: DMatrix<f64>,
    },
    /// Delegates to an outside encoder/decoder through OTPC files in `dir`.
    ///
    /// `decode` writes `decode_in.otpc`, runs `dir/decode decode_in.otpc
    /// decode_out.otpc` when that executable exists, and reads
    /// `decode_out.otpc`. `encode` does the same with `encode_*`.
    External { dir: PathBuf },
}

impl Codec {
    pub fn affine(spec: &AffineSpec) -> Result<Self> {
        let d = spec.offset.len();
        if d == 0 || spec.matrix.len() != d || spec.matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Codec(format!("affine codec needs a square {d}x{d} matrix")));
        }
        let matrix = DMatrix::from_row_iterator(d, d, spec.matrix.iter().flatten().copied());
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Codec("affine matrix is singular".into()))?;
        Ok(Codec::Affine {
            matrix,
            offset: DVector::from_vec(spec.offset.clone()),
            inverse,
        })
    }

    /// Parses `identity`, `affine:<json>` or `external:<dir>`.
    pub fn parse(arg: &str) -> Result<Self> {
        match arg.split_once(':') {
            None if arg == "identity" => Ok(Codec::Identity),
            Some(("affine", path)) => Self::affine(&read_json::<AffineSpec>(path)?),
            Some(("external", dir)) => {
                let dir = PathBuf::from(dir);
                if !dir.is_dir() {
                    return Err(Error::Codec(format!("external codec dir {} does not exist", dir.display())));
                }
                Ok(Codec::External { dir })
            }
            _ => Err(Error::Config(format!("unknown codec {arg:?}"))),
        }
    }

    pub fn encode(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Codec::Identity => Ok(inputs.to_vec()),
            Codec::Affine { matrix, offset, .. } => inputs
                .iter()
                .map(|x| affine_apply(matrix, x, |v| v + offset))
                .collect(),
            Codec::External { dir } => run_external(dir, "encode", inputs),
        }
    }

    pub fn decode(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Codec::Identity => Ok(latents.to_vec()),
            Codec::Affine { offset, inverse, .. } => latents
                .iter()
                .map(|y| {
                    if y.len() != offset.len() {
                        return Err(Error::Shape {
                            expected: offset.len(),
                            got: y.len(),
                        });
                    }
                    let shifted = DVector::from_column_slice(y) - offset;
                    Ok((inverse * shifted).iter().copied().collect())
                })
                .collect(),
            Codec::External { dir } => run_external(dir, "decode", latents),
        }
    }
}

fn affine_apply(m: &DMatrix<f64>, x: &[f64], post: impl Fn(DVector<f64>) -> DVector<f64>) -> Result<Vec<f64>> {
    if x.len() != m.ncols() {
        return Err(Error::Shape {
            expected: m.ncols(),
            got: x.len(),
        });
    }
    Ok(post(m * DVector::from_column_slice(x)).iter().copied().collect())
}

fn run_external(dir: &Path, stage: &str, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let input = dir.join(format!("{stage}_in.otpc"));
    let output = dir.join(format!("{stage}_out.otpc"));
    PointTable::from_rows(rows)?.write_otpc(&input)?;
    let exe = dir.join(stage);
    if exe.is_file() {
        let status = Command::new(&exe)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&exe, e))?;
        if !status.success() {
            return Err(Error::Codec(format!("{} exited with {status}", exe.display())));
        }
    }
    if !output.exists() {
        return Err(Error::Codec(format!(
            "external {stage} produced no {}",
            output.display()
        )));
    }
    let table = PointTable::read(&output)?;
    // A stale output from an earlier call must not be picked up next time.
    fs::remove_file(&output).map_err(|e| Error::io(&output, e))?;
    if table.count() != rows.len() {
        return Err(Error::Codec(format!(
            "external {stage} returned {} rows for {} inputs",
            table.count(),
            rows.len()
        )));
    }
    Ok(table.rows().map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rot_scale() -> Codec {
        Codec::affine(&AffineSpec {
            matrix: vec![vec![2.0, 1.0, 0.0], vec![-1.0, 3.0, 0.5], vec![0.0, 0.25, 1.5]],
            offset: vec![0.5, -1.0, 2.0],
        })
        .unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let x = vec![vec![1.5, -2.25], vec![1e300, -1e-300]];
        let c = Codec::Identity;
        assert_eq!(c.decode(&c.encode(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn affine_encodes_forward() {
        let c = rot_scale();
        let y = c.encode(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(y[0], vec![2.5, -2.0, 2.0]);
    }

    #[test]
    fn singular_affine_rejected() {
        let spec = AffineSpec {
            matrix: vec![vec![1.0, 2.0], vec![2.0, 4.0]],
            offset: vec![0.0, 0.0],
        };
        assert!(Codec::affine(&spec).is_err());
        let ragged = AffineSpec {
            matrix: vec![vec![1.0], vec![2.0, 4.0]],
            offset: vec![0.0, 0.0],
        };
        assert!(Codec::affine(&ragged).is_err());
    }

    #[test]
    fn parse_forms() {
        assert!(matches!(Codec::parse("identity").unwrap(), Codec::Identity));
        assert!(Codec::parse("bogus").is_err());
        assert!(Codec::parse("external:/definitely/not/here").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn external_round_trip_through_script() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("decode");
        fs::write(&script, "#!/bin/sh\ncp \"$1\" \"$2\"\n").unwrap();
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        let c = Codec::External { dir: dir.path().to_path_buf() };
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(c.decode(&rows).unwrap(), rows);
        // no encode executable and no output file
        assert!(c.encode(&rows).is_err());
    }

    proptest! {
        #[test]
        fn affine_round_trip(x in prop::collection::vec(-1e3f64..1e3, 3)) {
            let c = rot_scale();
            let back = c.decode(&c.encode(&[x.clone()]).unwrap()).unwrap();
            for (a, b) in back[0].iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
